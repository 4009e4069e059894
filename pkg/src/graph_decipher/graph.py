"""Graph, feature and label containers, TSV ingestion, splits and the planted-partition generator."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import CapacityError, ParseError, ValidationError

UNLABELED = -1


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Graph:
    """Directed graph with a CSR index over *incoming* edges.

    ``edges`` holds ``(src, dst)`` pairs in first-seen order; a message flows
    from ``src`` to ``dst``, so the neighborhood of ``v`` is the set of sources
    of edges that end at ``v``. ``indptr``/``indices`` give those sources,
    sorted ascending per node.
    """

    n_nodes: int
    edges: np.ndarray
    has_self_loops: bool = False
    indptr: np.ndarray = field(init=False, repr=False)
    indices: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        n = int(self.n_nodes)
        if n < 0:
            raise ValidationError("n_nodes must be non-negative")
        if edges.size and (edges.min() < 0 or edges.max() >= n):
            bad = edges[(edges < 0).any(1) | (edges >= n).any(1)][0]
            raise ValidationError(f"edge {tuple(int(x) for x in bad)} has an endpoint outside [0, {n})")
        key = edges[:, 1] * max(n, 1) + edges[:, 0]
        if np.unique(key).size != key.size:
            raise ValidationError("duplicate edges")
        order = np.lexsort((edges[:, 0], edges[:, 1]))
        indices = edges[order, 0].copy()
        counts = np.bincount(edges[:, 1], minlength=n)
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(counts, out=indptr[1:])
        if self.has_self_loops:
            loops = np.zeros(n, dtype=np.int64)
            np.add.at(loops, edges[edges[:, 0] == edges[:, 1], 0], 1)
            if not np.all(loops == 1):
                raise ValidationError("has_self_loops set but some node lacks its self-loop")
        object.__setattr__(self, "n_nodes", n)
        object.__setattr__(self, "edges", _frozen(edges))
        object.__setattr__(self, "indptr", _frozen(indptr))
        object.__setattr__(self, "indices", _frozen(indices))

    @classmethod
    def from_edges(cls, n_nodes: int, edges, undirected: bool = False) -> "Graph":
        """Build a graph, dropping repeated edges (first occurrence wins)."""
        e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if undirected:
            e = np.concatenate([e, e[:, ::-1]])
        if e.size:
            key = e[:, 1] * max(n_nodes, 1) + e[:, 0]
            _, first = np.unique(key, return_index=True)
            e = e[np.sort(first)]
        loops = bool(e.size) and n_nodes > 0 and _all_self_loops(n_nodes, e)
        return cls(n_nodes, e, has_self_loops=loops)

    @property
    def n_edges(self) -> int:
        return int(self.edges.shape[0])

    @property
    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    def neighbors(self, v: int) -> np.ndarray:
        return self.indices[self.indptr[v]:self.indptr[v + 1]]

    @property
    def csr_dst(self) -> np.ndarray:
        """Destination node of every CSR slot (aligned with ``indices``)."""
        return np.repeat(np.arange(self.n_nodes, dtype=np.int64), self.degrees)

    def is_symmetric(self) -> bool:
        fwd = set(map(tuple, self.edges.tolist()))
        return all((d, s) in fwd for s, d in fwd)


def _all_self_loops(n: int, edges: np.ndarray) -> bool:
    loops = edges[edges[:, 0] == edges[:, 1], 0]
    return np.unique(loops).size == n


def add_self_loops(g: Graph) -> Graph:
    """Return ``g`` with exactly one self-loop per node (idempotent)."""
    if g.has_self_loops:
        return g
    e = g.edges
    have = np.zeros(g.n_nodes, dtype=bool)
    have[e[e[:, 0] == e[:, 1], 0]] = True
    missing = np.flatnonzero(~have)
    loops = np.stack([missing, missing], axis=1)
    return Graph(g.n_nodes, np.concatenate([e, loops]), has_self_loops=True)


@dataclass(frozen=True, eq=False)
class LabelSet:
    labels: np.ndarray
    n_classes: int

    def __post_init__(self):
        y = np.asarray(self.labels, dtype=np.int64).copy()
        if self.n_classes < 2:
            raise ValidationError(f"need at least 2 classes, got {self.n_classes}")
        labeled = y[y != UNLABELED]
        if labeled.size and (labeled.min() < 0 or labeled.max() >= self.n_classes):
            raise ValidationError(f"label outside [0, {self.n_classes})")
        object.__setattr__(self, "labels", _frozen(y))

    def __len__(self):
        return self.labels.shape[0]

    def counts(self) -> np.ndarray:
        y = self.labels
        return np.bincount(y[y != UNLABELED], minlength=self.n_classes)


@dataclass(frozen=True, eq=False)
class Split:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def __post_init__(self):
        sets = []
        for name in ("train", "val", "test"):
            a = np.sort(np.asarray(getattr(self, name), dtype=np.int64))
            object.__setattr__(self, name, _frozen(a))
            sets.append(a)
        for i in range(3):
            if np.unique(sets[i]).size != sets[i].size:
                raise ValidationError("split contains repeated nodes")
            for j in range(i + 1, 3):
                if np.intersect1d(sets[i], sets[j]).size:
                    raise ValidationError("train/val/test must be pairwise disjoint")

    def mask(self, which: str, n_nodes: int) -> np.ndarray:
        m = np.zeros(n_nodes, dtype=bool)
        m[getattr(self, which)] = True
        return m

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("train", "val", "test")}

    @classmethod
    def from_dict(cls, d: dict) -> "Split":
        return cls(np.array(d["train"], dtype=np.int64), np.array(d["val"], dtype=np.int64),
                   np.array(d["test"], dtype=np.int64))


@dataclass(frozen=True, eq=False)
class Dataset:
    """A graph with dense node features, labels and the original node ids."""

    graph: Graph
    features: np.ndarray
    labels: LabelSet
    node_ids: tuple = ()

    def __post_init__(self):
        X = np.array(self.features, dtype=np.float64)
        if X.ndim != 2:
            raise ValidationError("features must be a 2-D matrix")
        if X.shape[0] != self.graph.n_nodes:
            raise ValidationError(f"{X.shape[0]} feature rows for {self.graph.n_nodes} nodes")
        if len(self.labels) != self.graph.n_nodes:
            raise ValidationError("label count does not match node count")
        if not np.all(np.isfinite(X)):
            raise ValidationError("features contain non-finite values")
        if np.any(X < 0):
            raise ValidationError("features must be non-negative")
        object.__setattr__(self, "features", _frozen(X))
        ids = tuple(self.node_ids) or tuple(str(i) for i in range(self.graph.n_nodes))
        if len(ids) != self.graph.n_nodes:
            raise ValidationError("node_ids length does not match node count")
        object.__setattr__(self, "node_ids", ids)

    @property
    def n_nodes(self) -> int:
        return self.graph.n_nodes

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def n_classes(self) -> int:
        return self.labels.n_classes

    def __iter__(self):
        # allows ``graph, X, labels = dataset``
        return iter((self.graph, self.features, self.labels))


# ----------------------------------------------------------------------------
# TSV format

def _fmt(v: float) -> str:
    if float(v).is_integer() and abs(v) < 2**53:
        return str(int(v))
    return repr(float(v))


def _parse_header(line: str, path) -> tuple[int, int]:
    parts = dict(tok.split("=", 1) for tok in line[1:].split() if "=" in tok)
    try:
        return int(parts["F"]), int(parts["C"])
    except (KeyError, ValueError):
        raise ParseError("header must read '#F=<F> C=<C>'", path, 1) from None


def load_dataset(nodes_path, edges_path, undirected: bool = False) -> Dataset:
    """Read a ``nodes.tsv``/``edges.tsv`` pair.

    Node ids are remapped to ``[0, N)`` in file order; the original ids are kept
    in ``Dataset.node_ids``. No self-loops are added.
    """
    nodes_path, edges_path = Path(nodes_path), Path(edges_path)
    ids: list[str] = []
    labels: list[int] = []
    rows: list[list[float]] = []
    F = C = None
    with nodes_path.open() as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.rstrip("\r\n")
            if not line.strip():
                continue
            if line.startswith("#"):
                if F is None and lineno == 1:
                    F, C = _parse_header(line, nodes_path)
                continue
            if F is None:
                raise ParseError("missing '#F=<F> C=<C>' header", nodes_path, lineno)
            cols = line.split("\t")
            if len(cols) < 2:
                raise ParseError("expected 'id<TAB>label<TAB>features...'", nodes_path, lineno)
            nid, lab, feats = cols[0], cols[1], cols[2:]
            if len(feats) != F:
                raise ValidationError(f"{nodes_path}:{lineno}: {len(feats)} features, header says F={F}")
            try:
                labels.append(UNLABELED if lab == "-" else int(lab))
                rows.append([float(x) for x in feats])
            except ValueError:
                raise ParseError(f"bad number in row {line!r}", nodes_path, lineno) from None
            if labels[-1] != UNLABELED and not 0 <= labels[-1] < C:
                raise ValidationError(f"{nodes_path}:{lineno}: label {labels[-1]} outside [0, {C})")
            ids.append(nid)
    if F is None:
        raise ParseError("empty nodes file", nodes_path, 1)
    index = {nid: i for i, nid in enumerate(ids)}
    if len(index) != len(ids):
        raise ValidationError(f"{nodes_path}: duplicate node ids")

    edges: list[tuple[int, int]] = []
    with edges_path.open() as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            cols = line.split("\t")
            if len(cols) != 2:
                raise ParseError("expected 'src<TAB>dst'", edges_path, lineno)
            try:
                edges.append((index[cols[0]], index[cols[1]]))
            except KeyError as exc:
                raise ValidationError(f"{edges_path}:{lineno}: unknown node id {exc.args[0]!r}") from None

    X = np.array(rows, dtype=np.float64).reshape(len(ids), F)
    graph = Graph.from_edges(len(ids), edges, undirected=undirected)
    return Dataset(graph, X, LabelSet(np.array(labels, dtype=np.int64), C), tuple(ids))


def save_dataset(ds: Dataset, nodes_path, edges_path) -> None:
    """Write ``ds`` in the TSV format read by :func:`load_dataset` (one row per directed edge)."""
    nodes_path, edges_path = Path(nodes_path), Path(edges_path)
    with nodes_path.open("w") as fh:
        fh.write(f"#F={ds.n_features} C={ds.n_classes}\n")
        for nid, lab, row in zip(ds.node_ids, ds.labels.labels, ds.features):
            lab_s = "-" if lab == UNLABELED else str(int(lab))
            fh.write("\t".join([nid, lab_s, *map(_fmt, row)]) + "\n")
    with edges_path.open("w") as fh:
        for s, d in ds.graph.edges:
            fh.write(f"{ds.node_ids[s]}\t{ds.node_ids[d]}\n")


# ----------------------------------------------------------------------------
# splits

def make_split(labels: LabelSet, per_class_train: int | Sequence[int], n_val: int, n_test: int,
               seed: int) -> Split:
    """Fixed-quota-per-class training set, val/test drawn from the remaining labeled nodes.

    ``per_class_train`` may be a single quota or one quota per class.
    """
    C = labels.n_classes
    quotas = np.broadcast_to(np.asarray(per_class_train, dtype=np.int64), (C,))
    if np.any(quotas < 0) or n_val < 0 or n_test < 0:
        raise CapacityError("split sizes must be non-negative")
    rng = np.random.default_rng(seed)
    y = labels.labels
    train, rest = [], []
    for c in range(C):
        members = np.flatnonzero(y == c)
        if members.size < quotas[c]:
            raise CapacityError(f"class {c} has {members.size} labeled nodes, quota is {quotas[c]}")
        members = rng.permutation(members)
        train.append(members[:quotas[c]])
        rest.append(members[quotas[c]:])
    rest = rng.permutation(np.concatenate(rest)) if rest else np.zeros(0, np.int64)
    if rest.size < n_val + n_test:
        raise CapacityError(f"only {rest.size} labeled nodes left for {n_val} val + {n_test} test")
    return Split(np.concatenate(train), rest[:n_val], rest[n_val:n_val + n_test])


# ----------------------------------------------------------------------------
# planted-partition generator

@dataclass(frozen=True)
class SbmSpec:
    """Stochastic block model with class-specific planted feature dimensions.

    ``class_sizes`` overrides ``n_per_class`` for imbalanced datasets.
    """

    n_per_class: int = 60
    n_classes: int = 3
    p_in: float = 0.2
    p_out: float = 0.02
    signal_dims_per_class: int = 5
    q_hi: float = 0.9
    q_lo: float = 0.05
    n_features: int = 30
    seed: int = 0
    class_sizes: tuple | None = None

    def __post_init__(self):
        if self.class_sizes is not None:
            object.__setattr__(self, "class_sizes", tuple(int(s) for s in self.class_sizes))
        self.validate()

    def validate(self) -> None:
        if self.n_classes < 2:
            raise ValidationError("SBM needs at least 2 classes")
        if not 0 <= self.p_out < self.p_in <= 1:
            raise ValidationError("need 0 <= p_out < p_in <= 1")
        if not 0 <= self.q_lo < self.q_hi <= 1:
            raise ValidationError("need 0 <= q_lo < q_hi <= 1")
        if self.n_classes * self.signal_dims_per_class > self.n_features:
            raise ValidationError("n_classes * signal_dims_per_class exceeds n_features")
        if self.signal_dims_per_class < 0:
            raise ValidationError("signal_dims_per_class must be non-negative")
        sizes = self.sizes()
        if len(sizes) != self.n_classes or any(s < 1 for s in sizes):
            raise ValidationError("every class needs at least one node")

    def sizes(self) -> tuple:
        if self.class_sizes is not None:
            return self.class_sizes
        return (self.n_per_class,) * self.n_classes

    def signal_dims(self) -> np.ndarray:
        """``(C, signal_dims_per_class)`` planted dimensions; disjoint across classes."""
        rng = np.random.default_rng([self.seed, 1])
        dims = rng.permutation(self.n_features)[: self.n_classes * self.signal_dims_per_class]
        return np.sort(dims.reshape(self.n_classes, self.signal_dims_per_class), axis=1)


def generate_sbm(spec: SbmSpec) -> Dataset:
    spec.validate()
    sizes = spec.sizes()
    y = np.repeat(np.arange(spec.n_classes, dtype=np.int64), sizes)
    n = y.size
    rng = np.random.default_rng([spec.seed, 0])
    iu, ju = np.triu_indices(n, k=1)
    p = np.where(y[iu] == y[ju], spec.p_in, spec.p_out)
    keep = rng.random(iu.size) < p
    s, d = iu[keep], ju[keep]
    edges = np.empty((2 * s.size, 2), dtype=np.int64)
    edges[0::2, 0], edges[0::2, 1] = s, d
    edges[1::2, 0], edges[1::2, 1] = d, s

    q = np.full((spec.n_classes, spec.n_features), spec.q_lo)
    for c, dims in enumerate(spec.signal_dims()):
        q[c, dims] = spec.q_hi
    X = (rng.random((n, spec.n_features)) < q[y]).astype(np.float64)
    return Dataset(Graph(n, edges), X, LabelSet(y, spec.n_classes))


def expected_intra_edges(spec: SbmSpec) -> tuple[float, float]:
    """Mean and standard deviation of the number of undirected intra-class edges."""
    pairs = sum(s * (s - 1) // 2 for s in spec.sizes())
    return pairs * spec.p_in, math.sqrt(pairs * spec.p_in * (1 - spec.p_in))


def induced_subgraph(ds: Dataset, keep: np.ndarray) -> tuple[Dataset, np.ndarray]:
    """Restrict ``ds`` to the nodes in ``keep`` (kept in ascending order).

    Returns the new dataset and the old-id array indexed by new id.
    """
    keep = np.unique(np.asarray(keep, dtype=np.int64))
    remap = np.full(ds.n_nodes, -1, dtype=np.int64)
    remap[keep] = np.arange(keep.size)
    e = ds.graph.edges
    mask = (remap[e[:, 0]] >= 0) & (remap[e[:, 1]] >= 0)
    edges = remap[e[mask]]
    g = Graph(keep.size, edges, has_self_loops=ds.graph.has_self_loops)
    labels = LabelSet(ds.labels.labels[keep], ds.n_classes)
    return Dataset(g, ds.features[keep], labels, tuple(ds.node_ids[i] for i in keep)), keep
