"""Category-oriented feature attention.

Per training category the node rows are sorted by cosine similarity to the
category mean, folded into a ``k x k x F`` map, max-pooled with stride equal
to the window size, and unfolded again with a 0/1 mask marking the pooled
maxima. Each feature dimension is then reduced to the mean of its masked
entries and scored through a per-category weight, giving one attention
vector over dimensions per category. Nodes without a training label use the
uniform vector.

Sorting and pooling choose *which* entries are read; gradients flow through
the chosen values only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import kernels
from .autodiff import Tensor
from .errors import ContractError, ValidationError
from .graph import UNLABELED, LabelSet, Split


@dataclass(frozen=True, eq=False)
class CategoryPartition:
    """``groups[c]`` for ``c < C`` holds the training nodes labeled ``c``;
    ``groups[C]`` holds every other node."""

    groups: tuple
    category_of: np.ndarray

    @property
    def n_categories(self) -> int:
        return len(self.groups) - 1


def partition_by_category(labels: LabelSet, split: Split, n_nodes: int) -> CategoryPartition:
    C = labels.n_classes
    cat = np.full(n_nodes, C, dtype=np.int64)
    train = split.train
    if train.size:
        y = labels.labels[train]
        if np.any(y == UNLABELED):
            raise ContractError("training nodes must be labeled")
        cat[train] = y
    groups = tuple(np.flatnonzero(cat == c) for c in range(C + 1))
    return CategoryPartition(groups, cat)


def category_mean(X_sub: np.ndarray) -> np.ndarray:
    """Column average. Each column is summed in ascending value order so the
    result does not depend on how the rows are numbered."""
    X_sub = np.asarray(X_sub, dtype=np.float64)
    if X_sub.shape[0] == 0:
        raise ContractError("mean of an empty group")
    return np.sort(X_sub, axis=0).sum(axis=0) / X_sub.shape[0]


def cosine_similarities(mean: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Cosine of every row of ``X`` with ``mean``; 0 where either norm is 0."""
    X = np.atleast_2d(X)
    dots = (X * mean).sum(axis=1)
    norms = np.sqrt((X * X).sum(axis=1)) * math.sqrt(float((mean * mean).sum()))
    out = np.zeros(X.shape[0])
    ok = norms > 0
    out[ok] = dots[ok] / norms[ok]
    return out


def cosine_sim(mean: np.ndarray, x: np.ndarray) -> float:
    return float(cosine_similarities(np.asarray(mean, float), np.asarray(x, float)[None, :])[0])


@dataclass(frozen=True, eq=False)
class SortedSubMatrix:
    category: int
    perm: np.ndarray      # node ids, most similar first
    matrix: np.ndarray    # X[perm]
    mean: np.ndarray
    sims: np.ndarray      # similarity of each row of ``matrix``


def sort_by_similarity(group, X: np.ndarray, category: int = -1) -> SortedSubMatrix:
    group = np.asarray(group, dtype=np.int64)
    if group.size == 0:
        raise ContractError("cannot sort an empty group")
    sub = X[group]
    mean = category_mean(sub)
    sims = cosine_similarities(mean, sub)
    order = np.lexsort((group, -sims))
    return SortedSubMatrix(category, group[order], sub[order], mean, sims[order])


@dataclass(frozen=True, eq=False)
class FeatureMap3D:
    values: np.ndarray    # (k, k, F); cells with row-major index >= m are zero
    m: int

    @property
    def k(self) -> int:
        return self.values.shape[0]

    @property
    def depth(self) -> int:
        return self.values.shape[2]


def side_length(m: int) -> int:
    return math.isqrt(m - 1) + 1 if m > 0 else 0


def to_feature_map(sorted_sub: SortedSubMatrix | np.ndarray) -> FeatureMap3D:
    rows = getattr(sorted_sub, "matrix", sorted_sub)
    m, F = rows.shape
    k = side_length(m)
    plane = np.zeros((k * k, F))
    plane[:m] = rows
    return FeatureMap3D(plane.reshape(k, k, F), m)


def n_windows(k: int, s: int) -> int:
    w = -(-k // s)
    return w * w


def n_real_windows(m: int, s: int) -> int:
    """Pooling windows that contain at least one of the ``m`` real cells."""
    k = side_length(m)
    starts = np.arange(0, k, s)
    # the top-left cell has the lowest index in its window
    return int(np.count_nonzero(starts[:, None] * k + starts[None, :] < m))


def max_pool(fmap: FeatureMap3D, s: int) -> tuple[np.ndarray, np.ndarray]:
    """Stride-``s`` max pooling over the ``k x k`` plane, per channel.

    Windows cover the plane with ``ceil(k/s)`` per axis (edge windows may be
    partial). Only real cells compete; ties go to the lowest row-major cell.
    Returns ``(pooled, argcell)`` shaped ``(w, w, F)``; ``argcell`` is the
    row-major cell index of the maximum, or -1 for a window with no real cell.
    """
    if s < 1:
        raise ContractError(f"pool size must be >= 1, got {s}")
    k, F = fmap.k, fmap.depth
    rows = fmap.values.reshape(k * k, F)[:fmap.m]
    pooled, arg = kernels.max_pool_argmax(rows, k, s)
    w = -(-k // s)
    return pooled.reshape(w, w, F), arg.reshape(w, w, F)


def upsample_with_mask(pooled: np.ndarray, argcell: np.ndarray, k: int, m: int, s: int | None = None):
    """Scatter pooled maxima back to their cells and unfold to ``m x F``.

    Returns ``(recovered, mask)``; ``mask`` is 1 exactly where a maximum was
    placed. A position on a padded cell is moved to the lowest real cell of its
    window (needs ``s``); -1 marks a window with nothing to place.
    """
    pooled = np.asarray(pooled, dtype=np.float64)
    argcell = np.asarray(argcell, dtype=np.int64)
    w = pooled.shape[0]
    F = pooled.shape[-1]
    if np.any(argcell < -1) or np.any(argcell >= k * k):
        raise ValidationError(f"argmax position outside the {k}x{k} plane")
    if s is None:
        s = -(-k // w) if w else 1
    recovered = np.zeros((m, F))
    mask = np.zeros((m, F), dtype=np.int8)
    for wr in range(w):
        for wc in range(w):
            for j in range(F):
                cell = int(argcell[wr, wc, j])
                if cell < 0:
                    continue
                r, c = divmod(cell, k)
                if r // s != wr or c // s != wc:
                    raise ValidationError(f"cell {cell} does not lie in window ({wr}, {wc})")
                if cell >= m:
                    cell = _lowest_real_cell(wr, wc, k, m, s)
                    if cell < 0:
                        continue
                recovered[cell, j] = pooled[wr, wc, j]
                mask[cell, j] = 1
    return recovered, mask


def _lowest_real_cell(wr: int, wc: int, k: int, m: int, s: int) -> int:
    for r in range(wr * s, min(k, wr * s + s)):
        for c in range(wc * s, min(k, wc * s + s)):
            if r * k + c < m:
                return r * k + c
    return -1


# ----------------------------------------------------------------------------
# the differentiable part

class _Counter:
    """Counts feature entries read while scoring attention (instrumentation)."""

    def __init__(self):
        self.entries = 0

    def reset(self):
        self.entries = 0


scoring_counter = _Counter()


@dataclass(frozen=True, eq=False)
class FabPlan:
    """Entries selected by pooling, for every category, in node coordinates.

    ``rows[i], cols[i]`` is a selected (node, dimension) entry belonging to
    category ``cats[i]``; entries are listed window by window so each
    dimension's entries are summed in the pooled-plane order.
    """

    n_categories: int
    n_features: int
    rows: np.ndarray
    cols: np.ndarray
    cats: np.ndarray
    counts: np.ndarray        # (C, F) mask ones per category and dimension
    sorted_subs: tuple        # SortedSubMatrix or None per category
    masks: tuple              # (m_c, F) int8 mask in sorted order, or None


def plan_fab(X: np.ndarray, partition: CategoryPartition, s: int) -> FabPlan:
    C = partition.n_categories
    F = X.shape[1]
    rows, cols, cats, subs, masks = [], [], [], [], []
    counts = np.zeros((C, F), dtype=np.int64)
    for c in range(C):
        group = partition.groups[c]
        if group.size == 0:
            subs.append(None)
            masks.append(None)
            continue
        sub = sort_by_similarity(group, X, c)
        fmap = to_feature_map(sub)
        _, arg = max_pool(fmap, s)
        flat = arg.reshape(-1, F)
        win, dim = np.nonzero(flat >= 0)
        cells = flat[win, dim]
        rows.append(sub.perm[cells])
        cols.append(dim)
        cats.append(np.full(cells.size, c, dtype=np.int64))
        mask = np.zeros((group.size, F), dtype=np.int8)
        mask[cells, dim] = 1
        counts[c] = mask.sum(axis=0)
        subs.append(sub)
        masks.append(mask)
    cat_arr = lambda parts: np.concatenate(parts) if parts else np.zeros(0, np.int64)
    return FabPlan(C, F, cat_arr(rows), cat_arr(cols), cat_arr(cats), counts, tuple(subs), tuple(masks))


def masked_means(H: Tensor, plan: FabPlan) -> Tensor:
    """``(C, F)`` mean of the masked entries of each dimension (0 where none)."""
    C, F = plan.n_categories, plan.n_features
    vals = H.data[plan.rows, plan.cols]
    scoring_counter.entries += vals.size
    denom = np.maximum(plan.counts, 1).astype(np.float64)
    sums = np.bincount(plan.cats * F + plan.cols, weights=vals, minlength=C * F).reshape(C, F)
    mu = sums / denom

    def vjp(g):
        out = np.zeros_like(H.data)
        out[plan.rows, plan.cols] = (g / denom)[plan.cats, plan.cols]
        return (out,)

    return ad._result(mu, (H,), vjp, "masked_means")


def category_attention(mu: Tensor, theta: Tensor, slope: float = 0.2) -> Tensor:
    """``alpha[c] = softmax_j(LeakyReLU(theta[c, j] * mu[c, j]))``."""
    if mu.shape != theta.shape:
        raise ContractError(f"theta {theta.shape} does not match means {mu.shape}")
    return ad.row_softmax(ad.leaky_relu(ad.mul(theta, mu), slope))


def feature_attention(recovered, mask, theta: Tensor, slope: float = 0.2) -> Tensor:
    """Attention vector for one category from its unfolded matrix and mask."""
    rec = ad.as_tensor(recovered)
    mask = np.asarray(mask, dtype=np.float64)
    if rec.shape != mask.shape:
        raise ContractError(f"matrix {rec.shape} and mask {mask.shape} differ")
    scoring_counter.entries += int(mask.sum())
    ones = np.maximum(mask.sum(axis=0, keepdims=True), 1.0)
    colsum = ad.matmul(Tensor(np.ones((1, mask.shape[0]))), ad.mul(rec, mask))
    mu = ad.mul(colsum, Tensor(1.0 / ones))
    th = theta if theta.ndim == 2 else ad.slice_(theta, (None, slice(None)))
    return ad.slice_(category_attention(mu, th, slope), 0)


def full_attention(alpha: Tensor) -> Tensor:
    """Append the uniform passthrough row to the ``(C, F)`` category attention."""
    F = alpha.shape[1]
    return ad.concat([alpha, Tensor(np.full((1, F), 1.0 / F))], axis=0)


def apply_feature_attention(H: Tensor, alpha_full: Tensor, partition: CategoryPartition,
                            W_f: Tensor) -> Tensor:
    """``ELU((alpha[cat(v)] * h_v) @ W_f)`` for every node, in node order."""
    A = ad.take_rows(alpha_full, partition.category_of)
    return ad.elu(ad.matmul(ad.mul(A, H), W_f))


@dataclass(frozen=True, eq=False)
class FeatureAttention:
    alpha: np.ndarray          # (C, F)
    mask_ones: np.ndarray      # (C, F)

    def full(self) -> np.ndarray:
        F = self.alpha.shape[1]
        return np.vstack([self.alpha, np.full((1, F), 1.0 / F)])


def fab_forward(X, partition: CategoryPartition, params: dict, s: int = 2,
                slope: float = 0.2) -> tuple[Tensor, FeatureAttention]:
    """Feature-attention branch for one head: ``params`` holds ``W_f`` (F x F_out)
    and ``theta`` (C x F)."""
    X = ad.as_tensor(X)
    plan = plan_fab(X.data, partition, s)
    mu = masked_means(X, plan)
    alpha = category_attention(mu, params["theta"], slope)
    out = apply_feature_attention(X, full_attention(alpha), partition, params["W_f"])
    return out, FeatureAttention(alpha.data.copy(), plan.counts.copy())
