# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled scoring kernel: every float32 row dotted with a float64 query.

Products and accumulators are float64 (storage is float32, accumulation is
float64). Each row uses eight independent accumulators over a fixed stride
pattern, combined in a fixed order, so repeated calls are bit-identical;
the order differs from BLAS' blocking, which is why the two backends agree
only to ~1e-15 (see ``modalbridge.kernels``).
"""


def matvec_f32_f64(const float[:, ::1] matrix, const double[::1] query,
                   double[::1] out):
    """Write ``matrix[i] . query`` into ``out[i]`` for every row ``i``."""
    cdef Py_ssize_t n = matrix.shape[0]
    cdef Py_ssize_t d = matrix.shape[1]
    cdef Py_ssize_t i, j, tail
    cdef double a0, a1, a2, a3, a4, a5, a6, a7
    if query.shape[0] != d:
        raise ValueError("query length does not match matrix width")
    if out.shape[0] != n:
        raise ValueError("output length does not match matrix height")
    tail = d - (d & 7)
    with nogil:
        for i in range(n):
            a0 = a1 = a2 = a3 = a4 = a5 = a6 = a7 = 0.0
            for j in range(0, tail, 8):
                a0 = a0 + (<double> matrix[i, j]) * query[j]
                a1 = a1 + (<double> matrix[i, j + 1]) * query[j + 1]
                a2 = a2 + (<double> matrix[i, j + 2]) * query[j + 2]
                a3 = a3 + (<double> matrix[i, j + 3]) * query[j + 3]
                a4 = a4 + (<double> matrix[i, j + 4]) * query[j + 4]
                a5 = a5 + (<double> matrix[i, j + 5]) * query[j + 5]
                a6 = a6 + (<double> matrix[i, j + 6]) * query[j + 6]
                a7 = a7 + (<double> matrix[i, j + 7]) * query[j + 7]
            for j in range(tail, d):
                a0 = a0 + (<double> matrix[i, j]) * query[j]
            out[i] = ((a0 + a1) + (a2 + a3)) + ((a4 + a5) + (a6 + a7))
