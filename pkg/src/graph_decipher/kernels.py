"""Kernel backend selection.

The compiled extension is used when it imports; setting ``GD_PURE_PYTHON=1``
forces the numpy fallback.
"""

from __future__ import annotations

import os

import numpy as np

from . import _pykernels
from .errors import DegenerateRowError

if os.environ.get("GD_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pykernels
else:
    try:
        from . import _ckernels as _impl
    except ImportError:  # extension not built
        _impl = _pykernels

BACKEND = "cython" if _impl is not _pykernels else "python"


def rowstable_matmul(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    return _impl.rowstable_matmul(np.ascontiguousarray(A, dtype=np.float64),
                                  np.ascontiguousarray(B, dtype=np.float64))


def segment_softmax(scores: np.ndarray, indptr: np.ndarray) -> np.ndarray:
    indptr = np.ascontiguousarray(indptr, dtype=np.int64)
    if np.any(np.diff(indptr) == 0):
        v = int(np.flatnonzero(np.diff(indptr) == 0)[0])
        raise DegenerateRowError(f"node {v} has an empty neighborhood; add self-loops first")
    return _impl.segment_softmax(np.ascontiguousarray(scores, dtype=np.float64), indptr)


def segment_weighted_sum(weights: np.ndarray, Z: np.ndarray, indices: np.ndarray,
                         indptr: np.ndarray) -> np.ndarray:
    return _impl.segment_weighted_sum(np.ascontiguousarray(weights, dtype=np.float64),
                                      np.ascontiguousarray(Z, dtype=np.float64),
                                      np.ascontiguousarray(indices, dtype=np.int64),
                                      np.ascontiguousarray(indptr, dtype=np.int64))


def max_pool_argmax(rows: np.ndarray, k: int, s: int):
    return _impl.max_pool_argmax(np.ascontiguousarray(rows, dtype=np.float64), int(k), int(s))
