"""Numpy fallback for the scoring kernel.

Same contract as the compiled extension: float32 storage, float64
accumulation. The matrix operand is pre-widened to float64 once (by
``kernels.prepare_matrix``) so the hot call is a single BLAS matvec.
"""
from __future__ import annotations

import numpy as np


def matvec_f32_f64(matrix64: np.ndarray, query: np.ndarray, out: np.ndarray) -> None:
    """Write ``matrix64[i] . query`` into ``out[i]`` for every row ``i``."""
    np.dot(matrix64, query, out=out)
