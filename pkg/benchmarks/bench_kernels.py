"""Throughput comparison: compiled scoring kernel vs numpy fallback.

Times the hot path (score every store row for a query, then select top-k)
at a few store sizes, and reports the largest relative score difference
between backends as a sanity check (expected ~1e-15; the backends differ
only in reduction order).

Run: python benchmarks/bench_kernels.py [--dim 512] [--queries 50]
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from modalbridge import kernels
from modalbridge.similarity import top_k_indices


def bench_backend(backend: str, matrix32: np.ndarray, queries: np.ndarray, k: int) -> tuple[float, np.ndarray]:
    prepared = kernels.prepare_matrix(matrix32, backend=backend)
    # warm-up
    kernels.matvec(prepared, queries[0], backend=backend)
    start = time.perf_counter()
    last = None
    for q in queries:
        scores = kernels.matvec(prepared, q, backend=backend)
        top_k_indices(scores, k)
        last = scores
    elapsed = time.perf_counter() - start
    return elapsed, last


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--dim", type=int, default=512)
    parser.add_argument("--queries", type=int, default=50)
    parser.add_argument("--k", type=int, default=20)
    parser.add_argument("--sizes", type=int, nargs="+", default=[10_000, 100_000, 400_000])
    args = parser.parse_args()

    backends = ["numpy"] + (["compiled"] if kernels.COMPILED_AVAILABLE else [])
    if not kernels.COMPILED_AVAILABLE:
        print("note: compiled kernel not built; benchmarking numpy only")
    print(f"active backend at import: {kernels.ACTIVE_BACKEND}")
    print(f"{args.queries} queries, dim {args.dim}, top-{args.k}\n")
    print(f"{'rows':>9}  " + "".join(f"{b + ' (ms/q)':>16}" for b in backends) + f"{'max rel diff':>16}")

    rng = np.random.default_rng(7)
    for n in args.sizes:
        matrix = rng.standard_normal((n, args.dim)).astype(np.float32)
        matrix /= np.linalg.norm(matrix, axis=1, keepdims=True)
        queries = rng.standard_normal((args.queries, args.dim))
        queries /= np.linalg.norm(queries, axis=1, keepdims=True)

        row = f"{n:>9}"
        results = {}
        for backend in backends:
            elapsed, scores = bench_backend(backend, matrix, queries, args.k)
            results[backend] = scores
            row += f"{1000 * elapsed / args.queries:>16.3f}"
        if len(backends) == 2:
            a, b = results["numpy"], results["compiled"]
            denom = np.maximum(np.abs(a), 1e-300)
            row += f"{np.max(np.abs(a - b) / denom):>16.2e}"
        print(row)


if __name__ == "__main__":
    main()
