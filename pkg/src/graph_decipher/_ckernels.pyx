# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops. Same contracts as ``_pykernels``.

Every reduction here runs in an order that depends only on values (sorted
sums) or on a node's own row, never on node numbering, so relabeling the
graph permutes outputs bit-for-bit.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, INFINITY
from libc.stdlib cimport malloc, free, qsort

cnp.import_array()


cdef int _cmp_double(const void* a, const void* b) noexcept nogil:
    cdef double x = (<const double*>a)[0]
    cdef double y = (<const double*>b)[0]
    return (x > y) - (x < y)


cdef inline double _sorted_sum(double* buf, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t i, j
    cdef double key, total
    if n <= 32:
        for i in range(1, n):
            key = buf[i]
            j = i - 1
            while j >= 0 and buf[j] > key:
                buf[j + 1] = buf[j]
                j -= 1
            buf[j + 1] = key
    else:
        qsort(buf, n, sizeof(double), _cmp_double)
    total = 0.0
    for i in range(n):
        total = total + buf[i]
    return total


def rowstable_matmul(const double[:, ::1] A, const double[:, ::1] B):
    """``A @ B`` where each output row is accumulated over the inner index in order."""
    cdef Py_ssize_t n = A.shape[0], k = A.shape[1], m = B.shape[1]
    cdef Py_ssize_t i, p, j
    cdef double a
    out = np.zeros((n, m), dtype=np.float64)
    cdef double[:, ::1] C = out
    with nogil:
        for i in range(n):
            for p in range(k):
                a = A[i, p]
                if a == 0.0:
                    continue
                for j in range(m):
                    C[i, j] = C[i, j] + a * B[p, j]
    return out


def segment_softmax(const double[::1] scores, const cnp.int64_t[::1] indptr):
    """Softmax within each CSR segment. Empty segments must be rejected by the caller."""
    cdef Py_ssize_t n = indptr.shape[0] - 1
    cdef Py_ssize_t v, e, lo, hi, maxdeg = 0
    cdef double mx, total
    for v in range(n):
        if indptr[v + 1] - indptr[v] > maxdeg:
            maxdeg = indptr[v + 1] - indptr[v]
    out = np.empty(scores.shape[0], dtype=np.float64)
    cdef double[::1] beta = out
    cdef double* buf = <double*>malloc(max(maxdeg, 1) * sizeof(double))
    if buf == NULL:
        raise MemoryError()
    try:
        with nogil:
            for v in range(n):
                lo = indptr[v]
                hi = indptr[v + 1]
                mx = -INFINITY
                for e in range(lo, hi):
                    if scores[e] > mx:
                        mx = scores[e]
                for e in range(lo, hi):
                    beta[e] = exp(scores[e] - mx)
                    buf[e - lo] = beta[e]
                total = _sorted_sum(buf, hi - lo)
                for e in range(lo, hi):
                    beta[e] = beta[e] / total
    finally:
        free(buf)
    return out


cdef inline bint _edge_less(Py_ssize_t x, Py_ssize_t y, const double[::1] w,
                            const double[:, ::1] Z, const cnp.int64_t[::1] idx) noexcept nogil:
    # order by weight, then by the source row lexicographically
    cdef Py_ssize_t j
    cdef double a, b
    if w[x] != w[y]:
        return w[x] < w[y]
    for j in range(Z.shape[1]):
        a = Z[idx[x], j]
        b = Z[idx[y], j]
        if a != b:
            return a < b
    return False


cdef void _sort_edges(cnp.int64_t* order, cnp.int64_t* tmp, Py_ssize_t n, const double[::1] w,
                      const double[:, ::1] Z, const cnp.int64_t[::1] idx) noexcept nogil:
    # stable bottom-up merge sort of edge positions
    cdef Py_ssize_t width = 1, lo, mid, hi, i, j, t
    cdef cnp.int64_t* src = order
    cdef cnp.int64_t* dst = tmp
    cdef cnp.int64_t* swap
    while width < n:
        lo = 0
        while lo < n:
            mid = min(lo + width, n)
            hi = min(lo + 2 * width, n)
            i, j, t = lo, mid, lo
            while i < mid and j < hi:
                if _edge_less(src[j], src[i], w, Z, idx):
                    dst[t] = src[j]
                    j += 1
                else:
                    dst[t] = src[i]
                    i += 1
                t += 1
            while i < mid:
                dst[t] = src[i]
                i += 1
                t += 1
            while j < hi:
                dst[t] = src[j]
                j += 1
                t += 1
            lo += 2 * width
        swap = src
        src = dst
        dst = swap
        width *= 2
    if src != order:
        for i in range(n):
            order[i] = src[i]


def segment_weighted_sum(const double[::1] weights, const double[:, ::1] Z,
                         const cnp.int64_t[::1] indices, const cnp.int64_t[::1] indptr):
    """``out[v] = sum_e weights[e] * Z[indices[e]]`` over the CSR segment of ``v``.

    Each segment is summed in the order of (weight, source row), which does not
    depend on node numbering.
    """
    cdef Py_ssize_t n = indptr.shape[0] - 1, d = Z.shape[1]
    cdef Py_ssize_t v, e, j, lo, hi, deg, maxdeg = 0
    cdef double wt
    for v in range(n):
        if indptr[v + 1] - indptr[v] > maxdeg:
            maxdeg = indptr[v + 1] - indptr[v]
    out = np.zeros((n, d), dtype=np.float64)
    cdef double[:, ::1] O = out
    cdef cnp.int64_t* order = <cnp.int64_t*>malloc(max(maxdeg, 1) * sizeof(cnp.int64_t))
    cdef cnp.int64_t* tmp = <cnp.int64_t*>malloc(max(maxdeg, 1) * sizeof(cnp.int64_t))
    if order == NULL or tmp == NULL:
        free(order)
        free(tmp)
        raise MemoryError()
    try:
        with nogil:
            for v in range(n):
                lo = indptr[v]
                hi = indptr[v + 1]
                deg = hi - lo
                for e in range(deg):
                    order[e] = lo + e
                _sort_edges(order, tmp, deg, weights, Z, indices)
                for e in range(deg):
                    wt = weights[order[e]]
                    for j in range(d):
                        O[v, j] = O[v, j] + wt * Z[indices[order[e]], j]
    finally:
        free(order)
        free(tmp)
    return out


def max_pool_argmax(const double[:, ::1] rows, Py_ssize_t k, Py_ssize_t s):
    """Max-pool the ``k x k`` plane whose first ``m`` cells hold ``rows`` (row-major).

    Returns ``(pooled, argcell)``, both ``(w*w, F)`` with ``w = ceil(k/s)``.
    Only real cells compete; ties go to the lowest cell index. A window with no
    real cell has ``argcell = -1`` and pooled value 0.
    """
    cdef Py_ssize_t m = rows.shape[0], F = rows.shape[1]
    cdef Py_ssize_t w = (k + s - 1) // s
    cdef Py_ssize_t wr, wc, r, c, cell, j, best_cell, win
    cdef double best, val
    pooled_arr = np.zeros((w * w, F), dtype=np.float64)
    arg_arr = np.full((w * w, F), -1, dtype=np.int64)
    cdef double[:, ::1] pooled = pooled_arr
    cdef cnp.int64_t[:, ::1] arg = arg_arr
    with nogil:
        for wr in range(w):
            for wc in range(w):
                win = wr * w + wc
                for j in range(F):
                    best_cell = -1
                    best = 0.0
                    for r in range(wr * s, min(wr * s + s, k)):
                        for c in range(wc * s, min(wc * s + s, k)):
                            cell = r * k + c
                            if cell >= m:
                                continue
                            val = rows[cell, j]
                            if best_cell < 0 or val > best:
                                best = val
                                best_cell = cell
                    if best_cell >= 0:
                        pooled[win, j] = best
                        arg[win, j] = best_cell
    return pooled_arr, arg_arr
