"""Attention-guided oversampling of minority categories.

A trained model's per-category feature attention marks which dimensions are
representative for a category. Clones of that category's training nodes keep
those dimensions and either keep, clear or perturb the rest.
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ContractError, ValidationError
from .fab import FeatureAttention
from .graph import Dataset, Graph, LabelSet, Split, induced_subgraph
from .model import GraphContext, ModelConfig, model_forward
from .train import evaluate, train

log = logging.getLogger(__name__)

MODES = ("ORI", "AA", "AP", "AN")
SWEEP_MODES = ("NONE",) + MODES
CLONE_EDGES = ("inherit", "source-only")
PAPER_RATIOS = tuple(range(1, 11))


@dataclass(frozen=True)
class RepresentativeSet:
    dims: tuple            # per category, sorted int arrays
    n_features: int

    def mask(self, category: int) -> np.ndarray:
        m = np.zeros(self.n_features, dtype=bool)
        m[self.dims[category]] = True
        return m


@dataclass(frozen=True)
class AugmentPlan:
    mode: str
    counts: dict
    p_a: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ContractError(f"unknown augmentation mode {self.mode!r}")
        if any(int(c) < 0 for c in self.counts.values()):
            raise ContractError("clone counts must be non-negative")
        if self.mode in ("AP", "AN") and not 0 < self.p_a < 1:
            raise ContractError("p_a must lie in (0, 1)")


def extract_representative(alpha, tau: float | None = None) -> RepresentativeSet:
    """Dimensions whose attention is at least ``tau`` (default ``1/F``, the uniform share).
    A category with no such dimension keeps its single strongest one."""
    a = alpha.alpha if isinstance(alpha, FeatureAttention) else np.asarray(alpha, dtype=np.float64)
    if a.ndim != 2 or a.shape[1] == 0:
        raise ContractError("alpha must be a C x F matrix")
    F = a.shape[1]
    tau = 1.0 / F if tau is None else float(tau)
    # slack for the rounding of a softmax over equal scores
    slack = 1e-12 * max(tau, 1e-300)
    dims = []
    for row in a:
        d = np.flatnonzero(row >= tau - slack)
        if d.size == 0:
            d = np.array([int(np.argmax(row))])
        dims.append(d.astype(np.int64))
    return RepresentativeSet(tuple(dims), F)


def alpha_from_model(ctx: GraphContext, params, config: ModelConfig, layer: int = 0) -> np.ndarray:
    """Head-averaged input-layer attention, one row per category."""
    if not config.use_fab:
        raise ContractError("a model without feature attention has no alpha")
    _, state = model_forward(ctx, params, config, training=False)
    return state.mean_alpha(layer)


# ----------------------------------------------------------------------------
# cloning

def _clone_features(src: np.ndarray, rep: np.ndarray, mode: str, p_a: float, pool: np.ndarray,
                    rng: np.random.Generator) -> np.ndarray:
    """``src``: rows to copy; ``pool``: the category's training rows (AN's value source)."""
    out = src.copy()
    if mode == "ORI":
        return out
    non_rep = ~rep
    if mode == "AA":
        out[:, non_rep] = 0.0
        return out
    hit = (rng.random(out.shape) < p_a) & non_rep
    if mode == "AP":
        out[hit] = 0.0
    else:  # AN
        rows, cols = np.nonzero(hit)
        picks = rng.integers(0, pool.shape[0], size=cols.size)
        out[rows, cols] = pool[picks, cols]
    return out


def clone_nodes(dataset: Dataset, split: Split, category: int, count: int, mode: str,
                rep: RepresentativeSet | None = None, p_a: float = 0.5, seed: int = 0,
                clone_edges: str = "inherit") -> tuple[Dataset, Split]:
    """Append ``count`` clones of ``category``'s training nodes (round-robin over them
    in ascending id order). Clones are labeled with the category and join the train split."""
    if mode not in MODES:
        raise ContractError(f"unknown augmentation mode {mode!r}")
    if clone_edges not in CLONE_EDGES:
        raise ContractError(f"clone_edges must be one of {CLONE_EDGES}")
    if count < 0:
        raise ContractError("clone count must be non-negative")
    if mode in ("AP", "AN") and not 0 < p_a < 1:
        raise ContractError("p_a must lie in (0, 1)")
    if mode != "ORI" and rep is None:
        raise ContractError(f"mode {mode} needs a representative set")
    y = dataset.labels.labels
    sources_all = np.sort(split.train[y[split.train] == category])
    if sources_all.size == 0:
        raise ContractError(f"category {category} has no training nodes to clone")
    if count == 0:
        return dataset, split

    n = dataset.n_nodes
    sources = sources_all[np.arange(count) % sources_all.size]
    rng = np.random.default_rng([seed, 11, category])
    rep_mask = rep.mask(category) if rep is not None else np.ones(dataset.n_features, bool)
    new_X = _clone_features(dataset.features[sources], rep_mask, mode, p_a,
                            dataset.features[sources_all], rng)
    new_ids = n + np.arange(count, dtype=np.int64)

    g = dataset.graph
    edges = [g.edges]
    link = np.stack([sources, new_ids], axis=1)
    edges += [link, link[:, ::-1]]
    if clone_edges == "inherit":
        e = g.edges[g.edges[:, 0] != g.edges[:, 1]]
        for clone, s in zip(new_ids, sources):
            out_nbrs = e[e[:, 0] == s, 1]
            in_nbrs = e[e[:, 1] == s, 0]
            nbrs = np.unique(np.concatenate([out_nbrs, in_nbrs]))
            if nbrs.size:
                c = np.full(nbrs.size, clone)
                edges += [np.stack([c, nbrs], 1), np.stack([nbrs, c], 1)]
    all_edges = np.concatenate(edges).astype(np.int64)
    if g.has_self_loops:
        all_edges = np.concatenate([all_edges, np.stack([new_ids, new_ids], 1)])
    graph = Graph.from_edges(n + count, all_edges)
    labels = LabelSet(np.concatenate([y, np.full(count, category, np.int64)]), dataset.n_classes)
    ids = dataset.node_ids + tuple(f"{dataset.node_ids[s]}#clone{i}" for i, s in enumerate(sources))
    ds = Dataset(graph, np.vstack([dataset.features, new_X]), labels, ids)
    return ds, Split(np.concatenate([split.train, new_ids]), split.val, split.test)


def apply_plan(dataset: Dataset, split: Split, plan: AugmentPlan, rep: RepresentativeSet | None,
               clone_edges: str = "inherit") -> tuple[Dataset, Split]:
    for c in sorted(plan.counts):
        dataset, split = clone_nodes(dataset, split, int(c), int(plan.counts[c]), plan.mode, rep,
                                     plan.p_a, plan.seed, clone_edges)
    return dataset, split


# ----------------------------------------------------------------------------
# two-class imbalance study

def minority_train_count(n_major: int, ratio: int) -> int:
    return math.ceil(n_major * ratio / 10)


def build_two_class_dataset(dataset: Dataset, split: Split, maj_class: int, min_class: int,
                            ratio: int, seed: int = 0) -> tuple[Dataset, Split]:
    """Keep the two classes (relabeled majority -> 0, minority -> 1). Training keeps every
    majority training node and ``ceil(n_major * ratio / 10)`` minority ones; validation keeps
    both classes; every other minority node is a test node."""
    if maj_class == min_class:
        raise ContractError("majority and minority classes must differ")
    if not 1 <= ratio <= 10:
        raise ContractError("ratio must be in 1..10")
    y = dataset.labels.labels
    for c in (maj_class, min_class):
        if not np.any(y == c):
            raise ContractError(f"class {c} is not present")
    maj_train = np.sort(split.train[y[split.train] == maj_class])
    min_train = np.sort(split.train[y[split.train] == min_class])
    want = minority_train_count(maj_train.size, ratio)
    if want > min_train.size:
        raise ContractError(f"ratio 10:{ratio} needs {want} minority training nodes, "
                            f"only {min_train.size} available")
    rng = np.random.default_rng([seed, 13])
    min_keep = np.sort(rng.permutation(min_train)[:want])

    keep = np.flatnonzero((y == maj_class) | (y == min_class))
    sub, old = induced_subgraph(dataset, keep)
    new_of = np.full(dataset.n_nodes, -1, np.int64)
    new_of[old] = np.arange(old.size)
    y_new = np.where(y[old] == maj_class, 0, 1).astype(np.int64)
    sub = replace(sub, labels=LabelSet(y_new, 2))

    train = new_of[np.concatenate([maj_train, min_keep])]
    val_old = split.val[(y[split.val] == maj_class) | (y[split.val] == min_class)]
    val = new_of[val_old]
    taken = np.zeros(old.size, bool)
    taken[train] = True
    taken[val] = True
    test = np.flatnonzero((y_new == 1) & ~taken)
    return sub, Split(train, val, test)


@dataclass
class SweepReport:
    rows: list = field(default_factory=list)   # (mode, ratio, seed, minority_accuracy)

    def to_tsv(self) -> str:
        lines = ["mode\tratio\tseed\tminority_accuracy"]
        lines += [f"{m}\t10:{r}\t{s}\t{a:.6f}" for m, r, s, a in self.rows]
        return "\n".join(lines) + "\n"

    def mean(self, mode: str, ratios=None) -> float:
        v = [a for m, r, _, a in self.rows if m == mode and (ratios is None or r in ratios)]
        return float(np.mean(v)) if v else float("nan")

    def summary(self) -> dict:
        out = {}
        for mode in dict.fromkeys(m for m, *_ in self.rows):
            acc = np.array([a for m, *_, a in self.rows if m == mode])
            by_ratio = {}
            for m, r, _, a in self.rows:
                if m == mode:
                    by_ratio.setdefault(r, []).append(a)
            means = {r: float(np.mean(v)) for r, v in sorted(by_ratio.items())}
            best = max(means, key=lambda r: (means[r], -r))
            q1, q3 = np.percentile(acc, [25, 75])
            out[mode] = {"mean": float(acc.mean()), "iqr": [float(q1), float(q3)],
                         "per_ratio_mean": {f"10:{r}": v for r, v in means.items()},
                         "best_ratio": f"10:{best}"}
        return out

    def summary_json(self) -> str:
        return json.dumps(self.summary(), indent=2, sort_keys=True) + "\n"


def _train_and_score(args) -> float:
    ds, split, cfg = args
    ctx = GraphContext.build(ds, split)
    params, _ = train(ctx, split, cfg)
    return evaluate(params, ctx, split, cfg, split.test).accuracy


def ratio_sweep(dataset: Dataset, split: Split, maj_class: int, min_class: int,
                modes=SWEEP_MODES, ratios=PAPER_RATIOS, seeds=(0,), config: ModelConfig | None = None,
                p_a: float = 0.5, clone_edges: str = "inherit", jobs: int = 1) -> SweepReport:
    """Minority-only test accuracy for every (mode, ratio, seed).

    Per seed the 10:1 two-class dataset is built and a model trained on it (this is
    the NONE row at every ratio, and the source of the attention used to pick
    representative dimensions). Each mode then clones minority training nodes up to
    ``10:ratio`` and retrains.
    """
    config = config or ModelConfig()
    for m in modes:
        if m not in SWEEP_MODES:
            raise ContractError(f"unknown sweep mode {m!r}")
    base_cfgs, bases = [], []
    for seed in seeds:
        cfg = replace(config, seed=seed, use_fab=True)
        base_ds, base_split = build_two_class_dataset(dataset, split, maj_class, min_class, 1, seed)
        base_cfgs.append(cfg)
        bases.append((base_ds, base_split))

    def run_all(tasks):
        if jobs > 1 and len(tasks) > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                return list(pool.map(_train_and_score, tasks))
        return [_train_and_score(t) for t in tasks]

    # base models first: their attention drives every augmented cell
    base_acc, reps = [], []
    for (ds, sp), cfg in zip(bases, base_cfgs):
        ctx = GraphContext.build(ds, sp)
        params, _ = train(ctx, sp, cfg)
        base_acc.append(evaluate(params, ctx, sp, cfg, sp.test).accuracy)
        reps.append(extract_representative(alpha_from_model(ctx, params, cfg)))

    cells, tasks = [], []
    for i, seed in enumerate(seeds):
        ds, sp = bases[i]
        n_major = int(np.sum(ds.labels.labels[sp.train] == 0))
        have = int(np.sum(ds.labels.labels[sp.train] == 1))
        for r in ratios:
            extra = minority_train_count(n_major, r) - have
            for m in modes:
                if m == "NONE" or extra <= 0:
                    cells.append((m, r, seed, base_acc[i]))
                    continue
                aug_ds, aug_sp = clone_nodes(ds, sp, 1, extra, m, reps[i], p_a, seed, clone_edges)
                cells.append((m, r, seed, None))
                tasks.append((aug_ds, aug_sp, base_cfgs[i]))
    results = iter(run_all(tasks))
    report = SweepReport()
    for m, r, s, a in cells:
        report.rows.append((m, r, s, a if a is not None else next(results)))
    return report


# ----------------------------------------------------------------------------
# all-category rebalancing

def rebalance_counts(train_counts, target_ratio: float = 1.5) -> dict:
    """Clones per category so that no pair of training counts differs by more than
    ``target_ratio``."""
    if target_ratio < 1:
        raise ContractError("target_ratio must be >= 1")
    counts = np.asarray(train_counts, dtype=np.int64)
    top = int(counts.max()) if counts.size else 0
    floor = math.ceil(top / target_ratio - 1e-12)
    return {c: max(0, floor - int(n)) for c, n in enumerate(counts) if n > 0}


def rebalance_all(dataset: Dataset, split: Split, alpha, target_ratio: float = 1.5,
                  mode: str = "AP", p_a: float = 0.5, seed: int = 0,
                  clone_edges: str = "inherit") -> tuple[Dataset, Split]:
    """Clone minority training nodes until every pair of categories is within
    ``target_ratio`` in training count. ``alpha`` is a trained model's C x F attention."""
    y = dataset.labels.labels
    counts = np.bincount(y[split.train], minlength=dataset.n_classes)
    plan = AugmentPlan(mode, rebalance_counts(counts, target_ratio), p_a, seed)
    rep = extract_representative(alpha)
    if len(rep.dims) != dataset.n_classes:
        raise ValidationError("alpha has the wrong number of categories")
    return apply_plan(dataset, split, plan, rep, clone_edges)
