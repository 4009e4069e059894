"""Dense tensors with a reverse-mode tape.

Each primitive returns a new :class:`Tensor`; when any input requires a
gradient the result keeps its parents and a vector-Jacobian product closure.
``backward`` walks that graph once in reverse topological order and then
releases it, so a second ``backward`` through the same tape raises.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from scipy import sparse

from . import kernels
from .errors import ContractError, DegenerateRowError, NumericError, ShapeError

DTYPE = np.float64


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_vjp", "_op", "_consumed")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents: tuple = ()
        self._vjp: Callable | None = None
        self._op = "leaf"
        self._consumed = False

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self._op}{tag}, requires_grad={self.requires_grad})"

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def numpy(self) -> np.ndarray:
        return self.data

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __sub__(self, other):
        return add(self, scale(as_tensor(other), -1.0))


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: Sequence[Tensor], vjp: Callable, op: str) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NumericError(f"non-finite value produced by {op}")
    out = Tensor(data)
    out._op = op
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjp = vjp
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every leaf that requires it."""
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._consumed:
        raise ContractError("this tape was already consumed by a previous backward()")
    if not loss.requires_grad:
        return

    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        if node._consumed:
            raise ContractError("this tape was already consumed by a previous backward()")
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._vjp is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._vjp(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg

    for node in order:
        if node._vjp is not None:
            node._vjp = None
            node._parents = ()
            node._consumed = True
    loss._consumed = True


# ----------------------------------------------------------------------------
# elementwise and linear algebra

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError as exc:
        raise ShapeError(f"add: {a.shape} vs {b.shape}") from exc
    return _result(data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError as exc:
        raise ShapeError(f"mul: {a.shape} vs {b.shape}") from exc
    return _result(data, (a, b),
                   lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
                   "mul")


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _result(a.data * c, (a,), lambda g: (g * c,), "scale")


def matmul(A: Tensor, B: Tensor) -> Tensor:
    """2-D product. Rows are computed independently, so permuting the rows of
    ``A`` permutes the result bit-for-bit."""
    A, B = as_tensor(A), as_tensor(B)
    if A.ndim != 2 or B.ndim != 2 or A.shape[1] != B.shape[0]:
        raise ShapeError(f"matmul: {A.shape} @ {B.shape}")
    data = kernels.rowstable_matmul(A.data, B.data)
    return _result(data, (A, B), lambda g: (g @ B.data.T, A.data.T @ g), "matmul")


def sum_all(a: Tensor) -> Tensor:
    return _result(np.asarray(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),),
                   "sum")


def mean_over(a: Tensor, axis: int) -> Tensor:
    n = a.shape[axis]
    if n == 0:
        raise ShapeError("mean over an empty axis")

    def vjp(g):
        return (np.broadcast_to(np.expand_dims(g, axis) / n, a.shape).copy(),)

    return _result(a.data.mean(axis=axis), (a,), vjp, "mean")


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    try:
        data = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: {[p.shape for p in parts]}") from exc
    bounds = np.cumsum([0] + [p.shape[axis] for p in parts])

    def vjp(g):
        return tuple(np.take(g, np.arange(lo, hi), axis=axis) for lo, hi in zip(bounds[:-1], bounds[1:]))

    return _result(data, parts, vjp, "concat")


def slice_(a: Tensor, key) -> Tensor:
    """Basic (view) indexing, e.g. ``slice_(a, (slice(None), slice(0, 4)))``."""
    data = a.data[key]

    def vjp(g):
        out = np.zeros_like(a.data)
        out[key] = g
        return (out,)

    return _result(np.array(data), (a,), vjp, "slice")


def reshape(a: Tensor, shape) -> Tensor:
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def take_rows(a: Tensor, idx: np.ndarray) -> Tensor:
    """Gather rows ``a[idx]``; repeated indices accumulate in the backward pass."""
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise ShapeError("take_rows: index out of range")

    def vjp(g):
        out = np.zeros_like(a.data)
        np.add.at(out, idx, g)
        return (out,)

    return _result(a.data[idx], (a,), vjp, "take_rows")


# ----------------------------------------------------------------------------
# activations

def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    pos = x.data > 0
    data = np.where(pos, x.data, slope * x.data)
    return _result(data, (x,), lambda g: (np.where(pos, g, slope * g),), "leaky_relu")


def _elu_derivative(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return np.where(x > 0, 1.0, y + 1.0)


def elu(x: Tensor) -> Tensor:
    data = np.where(x.data > 0, x.data, np.expm1(np.minimum(x.data, 0.0)))
    return _result(data, (x,), lambda g: (g * _elu_derivative(x.data, data),), "elu")


def row_softmax(X: Tensor) -> Tensor:
    z = X.data - X.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return _result(p, (X,), vjp, "row_softmax")


def masked_row_softmax(X: Tensor, mask) -> Tensor:
    """Softmax over the entries where ``mask`` is 1; masked-out entries are exactly 0."""
    mask = np.asarray(mask).astype(bool)
    if mask.shape != X.shape:
        raise ShapeError(f"mask {mask.shape} vs input {X.shape}")
    if not np.all(mask.any(axis=-1)):
        raise DegenerateRowError("softmax over a fully masked row")
    z = np.where(mask, X.data, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.where(mask, np.exp(z), 0.0)
    p = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return _result(p, (X,), vjp, "masked_row_softmax")


def dropout(x: Tensor, p: float, training: bool, rng: np.random.Generator | int | None = None) -> Tensor:
    """Inverted dropout. Identity (the same object) when not training or ``p == 0``."""
    if not 0 <= p < 1:
        raise ContractError(f"dropout rate must be in [0, 1), got {p}")
    if not training or p == 0:
        return x
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return _result(x.data * keep, (x,), lambda g: (g * keep,), "dropout")


def cross_entropy(logits: Tensor, targets, nodes) -> Tensor:
    """Mean negative log-likelihood over the rows listed in ``nodes``."""
    nodes = np.asarray(nodes, dtype=np.int64)
    if nodes.size == 0:
        raise ContractError("cross_entropy over an empty node set")
    targets = np.asarray(targets, dtype=np.int64)
    z = logits.data[nodes]
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    t = targets[nodes]
    if t.min() < 0 or t.max() >= logits.shape[1]:
        raise ContractError("cross_entropy target outside [0, C)")
    n = nodes.size
    loss = -logp[np.arange(n), t].mean()

    def vjp(g):
        p = np.exp(logp)
        p[np.arange(n), t] -= 1.0
        out = np.zeros_like(logits.data)
        np.add.at(out, nodes, p * (float(g) / n))
        return (out,)

    return _result(np.asarray(loss), (logits,), vjp, "cross_entropy")


# ----------------------------------------------------------------------------
# edge (CSR segment) operations

def segment_softmax(scores: Tensor, indptr: np.ndarray, dst: np.ndarray) -> Tensor:
    """Softmax of per-edge ``scores`` within each destination's CSR segment."""
    beta = kernels.segment_softmax(scores.data, indptr)
    n = indptr.size - 1

    def vjp(g):
        inner = np.bincount(dst, weights=g * beta, minlength=n)
        return (beta * (g - inner[dst]),)

    return _result(beta, (scores,), vjp, "segment_softmax")


def segment_aggregate(weights: Tensor, Z: Tensor, indices: np.ndarray, indptr: np.ndarray,
                      dst: np.ndarray) -> Tensor:
    """``out[v] = sum over in-edges (s -> v) of weights[e] * Z[s]``."""
    n = indptr.size - 1
    out = kernels.segment_weighted_sum(weights.data, Z.data, indices, indptr)

    def vjp(g):
        gw = np.einsum("ij,ij->i", g[dst], Z.data[indices])
        A = sparse.csr_matrix((weights.data, indices, indptr), shape=(n, Z.shape[0]))
        return gw, np.asarray(A.T @ g)

    return _result(out, (weights, Z), vjp, "segment_aggregate")
