"""Scoring-kernel backend selection: compiled extension or numpy fallback.

The package picks the compiled Cython kernel when it imported cleanly and
the numpy implementation otherwise. ``MODALBRIDGE_KERNEL=numpy|compiled``
forces a backend (forcing ``compiled`` without the built extension raises at
import).

Both backends accumulate dot products in float64 over float32 storage and
are individually deterministic: the same install produces bit-identical
scores across runs and worker counts. They are not guaranteed bit-identical
to *each other* — the compiled loop sums strictly left to right while BLAS
blocks its reduction — so scores agree to ~1e-15 relative, and every
byte-identity contract in this package is scoped to the active backend.

``benchmarks/bench_kernels.py`` compares the two.
"""
from __future__ import annotations

import os

import numpy as np

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

from . import _kernels_py

COMPILED_AVAILABLE = _compiled is not None

_requested = os.environ.get("MODALBRIDGE_KERNEL", "auto").strip().lower()
if _requested in ("", "auto"):
    ACTIVE_BACKEND = "compiled" if COMPILED_AVAILABLE else "numpy"
elif _requested == "numpy":
    ACTIVE_BACKEND = "numpy"
elif _requested == "compiled":
    if not COMPILED_AVAILABLE:
        raise ImportError(
            "MODALBRIDGE_KERNEL=compiled but the modalbridge._kernels "
            "extension is not built (pip install -e . rebuilds it)"
        )
    ACTIVE_BACKEND = "compiled"
else:
    raise ValueError(f"unknown MODALBRIDGE_KERNEL value: {_requested!r}")


def prepare_matrix(matrix: np.ndarray, backend: str | None = None) -> np.ndarray:
    """Return the per-backend scoring operand for a float32 row matrix.

    Compiled backend reads float32 directly; numpy backend wants the rows
    pre-widened to float64 so each matvec is a plain BLAS call.
    """
    b = backend or ACTIVE_BACKEND
    if b == "compiled":
        return np.ascontiguousarray(matrix, dtype=np.float32)
    return np.ascontiguousarray(matrix, dtype=np.float64)


def matvec(prepared: np.ndarray, query: np.ndarray, backend: str | None = None) -> np.ndarray:
    """Dot every prepared row with ``query``, accumulating in float64."""
    b = backend or ACTIVE_BACKEND
    q = np.ascontiguousarray(query, dtype=np.float64)
    out = np.empty(prepared.shape[0], dtype=np.float64)
    if b == "compiled":
        _compiled.matvec_f32_f64(prepared, q, out)
    else:
        _kernels_py.matvec_f32_f64(prepared, q, out)
    return out
