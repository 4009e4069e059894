"""Analytic cost model: multiply-accumulates of one inference pass, reported as
FLOPs (2 per MAC) in millions, plus the trainable-parameter count.

Only MACs are counted. Softmax, activations, sorting, pooling comparisons and
dropout are free under this convention.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import ContractError
from .fab import n_real_windows
from .model import ModelConfig


@dataclass(frozen=True)
class GraphStats:
    """Size summary of a graph. ``n_edges`` counts directed edges without self-loops;
    ``category_sizes`` are the training nodes per category."""

    n_nodes: int
    n_edges: int
    n_features: int
    n_classes: int
    category_sizes: tuple = field(default=())

    def __post_init__(self):
        if min(self.n_nodes, self.n_features, self.n_classes) < 1 or self.n_edges < 0:
            raise ContractError("graph stats must be positive")
        if not self.category_sizes:
            object.__setattr__(self, "category_sizes", (20,) * self.n_classes)
        if len(self.category_sizes) != self.n_classes:
            raise ContractError("need one category size per class")

    @classmethod
    def cora(cls) -> "GraphStats":
        # largest connected component of the citation graph: 2485 nodes and
        # 5069 undirected links (stored in both directions), 20 training nodes per class
        return cls(2485, 2 * 5069, 1433, 7, (20,) * 7)

    @classmethod
    def from_dataset(cls, dataset, split) -> "GraphStats":
        counts = [int((dataset.labels.labels[split.train] == c).sum())
                  for c in range(dataset.labels.n_classes)]
        g = dataset.graph
        loops = int((g.edges[:, 0] == g.edges[:, 1]).sum()) if g.n_edges else 0
        return cls(dataset.n_nodes, g.n_edges - loops, dataset.features.shape[1],
                   dataset.labels.n_classes, tuple(counts))


def layer_macs(config: ModelConfig, stats: GraphStats, f_in: int, f_out: int) -> dict[str, int]:
    n = stats.n_nodes
    e = stats.n_edges + n
    nab = n * f_in * f_out + 2 * n * f_out + e * f_out
    fab = 0
    if config.use_fab:
        windows = sum(n_real_windows(m, config.pool) for m in stats.category_sizes if m > 0)
        fab = windows * f_in + stats.n_classes * f_in + n * f_in + n * f_in * f_out
    combine = n * f_out + n * f_out * f_out
    per_head = {"nab": nab, "fab": fab, "combine": combine}
    out = {k: v * config.heads for k, v in per_head.items()}
    out["gates"] = config.heads * n * f_out
    return out


def count_flops(config: ModelConfig, stats: GraphStats) -> float:
    """Inference cost in MFLOPs (2 x MACs / 1e6)."""
    total = 0
    for f_in, f_out in config.widths(stats.n_features, stats.n_classes):
        total += sum(layer_macs(config, stats, f_in, f_out).values())
    return 2.0 * total / 1e6


def flop_breakdown(config: ModelConfig, stats: GraphStats) -> list[dict]:
    rows = []
    for layer, (f_in, f_out) in enumerate(config.widths(stats.n_features, stats.n_classes)):
        macs = layer_macs(config, stats, f_in, f_out)
        rows.append({"layer": layer, **{k: 2.0 * v / 1e6 for k, v in macs.items()}})
    return rows


def count_params(config: ModelConfig, n_features: int, n_classes: int) -> int:
    total = 0
    for f_in, f_out in config.widths(n_features, n_classes):
        head = f_in * f_out + 2 * f_out + f_out * f_out
        if config.use_fab:
            head += f_in * f_out + n_classes * f_in
        total += config.heads * head + config.heads
    return total
