"""Pure-numpy versions of the compiled kernels (same contracts, same reduction order)."""

from __future__ import annotations

import numpy as np

# bound on padded-buffer size per chunk, in doubles
_CHUNK_ELEMS = 1 << 22


def rowstable_matmul(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    A = np.ascontiguousarray(A, dtype=np.float64)
    B = np.ascontiguousarray(B, dtype=np.float64)
    out = np.zeros((A.shape[0], B.shape[1]))
    for p in range(A.shape[1]):
        out += A[:, p:p + 1] * B[p]
    return out


def _slots(indptr: np.ndarray):
    deg = np.diff(indptr)
    dst = np.repeat(np.arange(deg.size), deg)
    slot = np.arange(indptr[-1]) - indptr[dst]
    return deg, dst, slot


def _node_chunks(indptr: np.ndarray, width: int):
    n = indptr.size - 1
    maxdeg = int(np.diff(indptr).max()) if n else 0
    step = max(1, _CHUNK_ELEMS // max(1, maxdeg * width))
    for lo in range(0, n, step):
        yield lo, min(n, lo + step)


def segment_softmax(scores: np.ndarray, indptr: np.ndarray) -> np.ndarray:
    scores = np.asarray(scores, dtype=np.float64)
    beta = np.empty_like(scores)
    for lo, hi in _node_chunks(indptr, 1):
        ptr = indptr[lo:hi + 1] - indptr[lo]
        seg = scores[indptr[lo]:indptr[hi]]
        deg, dst, slot = _slots(ptr)
        P = np.full((int(deg.max()), hi - lo), -np.inf)
        P[slot, dst] = seg
        mx = P.max(axis=0)
        ex = np.exp(seg - mx[dst])
        E = np.zeros_like(P)
        E[slot, dst] = ex
        E.sort(axis=0)
        total = E.sum(axis=0)
        beta[indptr[lo]:indptr[hi]] = ex / total[dst]
    return beta


def edge_order(weights: np.ndarray, Z: np.ndarray, indices: np.ndarray,
               indptr: np.ndarray) -> np.ndarray:
    """Permutation of edge positions sorting each segment by (weight, source row)."""
    deg, dst, _ = _slots(indptr)
    rows = Z[indices]
    keys = [rows[:, j] for j in range(Z.shape[1] - 1, -1, -1)] + [weights, dst]
    return np.lexsort(keys)


def segment_weighted_sum(weights: np.ndarray, Z: np.ndarray, indices: np.ndarray,
                         indptr: np.ndarray) -> np.ndarray:
    Z = np.asarray(Z, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    n, d = indptr.size - 1, Z.shape[1]
    out = np.zeros((n, d))
    if indptr[-1] == 0:
        return out
    order = edge_order(weights, Z, indices, indptr)
    w_sorted, src_sorted = weights[order], indices[order]
    for lo, hi in _node_chunks(indptr, d):
        a, b = indptr[lo], indptr[hi]
        if a == b:
            continue
        ptr = indptr[lo:hi + 1] - a
        deg, dst, slot = _slots(ptr)
        V = np.zeros((int(deg.max()), hi - lo, d))
        V[slot, dst] = w_sorted[a:b, None] * Z[src_sorted[a:b]]
        # the outer-axis reduction adds slot planes one after another
        acc = np.zeros((hi - lo, d))
        for plane in V:
            acc += plane
        out[lo:hi] = acc
    return out


def max_pool_argmax(rows: np.ndarray, k: int, s: int):
    rows = np.asarray(rows, dtype=np.float64)
    m, F = rows.shape
    w = -(-k // s)
    side = w * s
    plane = np.full((side * side, F), -np.inf)
    cells = np.arange(m)
    r, c = divmod(cells, k)
    plane[r * side + c] = rows
    win = plane.reshape(w, s, w, s, F).transpose(0, 2, 1, 3, 4).reshape(w * w, s * s, F)
    local = win.argmax(axis=1)
    pooled = np.take_along_axis(win, local[:, None, :], axis=1)[:, 0, :]
    wr, wc = np.divmod(np.arange(w * w), w)
    lr, lc = np.divmod(local, s)
    arg = (wr[:, None] * s + lr) * k + (wc[:, None] * s + lc)
    empty = np.isneginf(pooled)
    arg[empty] = -1
    pooled[empty] = 0.0
    return pooled, arg.astype(np.int64)
