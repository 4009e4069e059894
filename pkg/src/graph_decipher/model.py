"""The dual-attention network: node attention, feature attention, their
per-head fusion and the gated multi-head average."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError, ShapeError
from .fab import (CategoryPartition, apply_feature_attention, category_attention, full_attention,
                  masked_means, partition_by_category, plan_fab)
from .graph import Dataset, Graph, LabelSet, Split, add_self_loops
from .optim import xavier_init


@dataclass
class ModelConfig:
    layers: int = 2
    hidden: int = 64
    heads: int = 8
    pool: int = 2
    dropout: float = 0.5
    slope: float = 0.2
    seed: int = 0
    epochs: int = 1000
    patience: int = 100
    lr: float = 5e-3
    weight_decay: float = 5e-4
    use_fab: bool = True
    theta_init: str = "xavier"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.layers < 1:
            raise ContractError("layers must be >= 1")
        if self.hidden < 1:
            raise ContractError("hidden width must be >= 1")
        if self.heads < 1:
            raise ContractError("heads must be >= 1")
        if self.pool < 1:
            raise ContractError("pool size must be >= 1")
        if not 0 <= self.dropout < 1:
            raise ContractError("dropout must be in [0, 1)")
        if self.epochs < 0 or self.patience < 0:
            raise ContractError("epochs and patience must be non-negative")
        if self.theta_init not in ("xavier", "zeros"):
            raise ContractError("theta_init must be 'xavier' or 'zeros'")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})

    def widths(self, n_features: int, n_classes: int) -> list[tuple[int, int]]:
        out = []
        f_in = n_features
        for layer in range(self.layers):
            f_out = n_classes if layer == self.layers - 1 else self.hidden
            out.append((f_in, f_out))
            f_in = f_out
        return out


def init_params(config: ModelConfig, n_features: int, n_classes: int) -> dict[str, Tensor]:
    rng = np.random.default_rng([config.seed, 100])
    params: dict[str, Tensor] = {}
    for layer, (f_in, f_out) in enumerate(config.widths(n_features, n_classes)):
        for k in range(config.heads):
            pre = f"l{layer}.h{k}."
            params[pre + "W_n"] = xavier_init((f_in, f_out), rng, pre + "W_n")
            params[pre + "a"] = xavier_init((2 * f_out, 1), rng, pre + "a")
            if config.use_fab:
                params[pre + "W_f"] = xavier_init((f_in, f_out), rng, pre + "W_f")
                theta = xavier_init((n_classes, f_in), rng, pre + "theta")
                if config.theta_init == "zeros":
                    theta.data = np.zeros_like(theta.data)
                params[pre + "theta"] = theta
            params[pre + "W_o"] = xavier_init((f_out, f_out), rng, pre + "W_o")
        params[f"l{layer}.gates"] = Tensor(np.ones(config.heads), requires_grad=True, name=f"l{layer}.gates")
    return params


@dataclass(frozen=True, eq=False)
class GraphContext:
    """Everything the forward pass needs from the data: a self-looped graph,
    its CSR edge arrays, the features, and the category partition."""

    graph: Graph
    features: np.ndarray
    labels: LabelSet
    split: Split
    partition: CategoryPartition
    dst: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "dst", self.graph.csr_dst)

    @classmethod
    def build(cls, dataset: Dataset, split: Split) -> "GraphContext":
        g = add_self_loops(dataset.graph)
        part = partition_by_category(dataset.labels, split, dataset.n_nodes)
        return cls(g, dataset.features, dataset.labels, split, part)

    @property
    def indptr(self) -> np.ndarray:
        return self.graph.indptr

    @property
    def indices(self) -> np.ndarray:
        return self.graph.indices


def nab_forward(H: Tensor, ctx: GraphContext, W_n: Tensor, a: Tensor, slope: float = 0.2,
                dropout: float = 0.0, training: bool = False, rng=None) -> tuple[Tensor, Tensor]:
    """Node attention: returns ``(ELU(sum_s beta_vs W h_s), beta)`` with ``beta``
    aligned to the CSR edge order of ``ctx``."""
    if not ctx.graph.has_self_loops:
        raise ContractError("node attention needs self-loops")
    z = ad.matmul(H, W_n)
    d = z.shape[1]
    if a.shape[0] != 2 * d:
        raise ShapeError(f"attention vector has length {a.shape[0]}, expected {2 * d}")
    s_center = ad.matmul(z, ad.slice_(a, slice(0, d)))
    s_nbr = ad.matmul(z, ad.slice_(a, slice(d, 2 * d)))
    e = ad.add(ad.take_rows(s_center, ctx.dst), ad.take_rows(s_nbr, ctx.indices))
    e = ad.leaky_relu(ad.reshape(e, (-1,)), slope)
    beta = ad.segment_softmax(e, ctx.indptr, ctx.dst)
    weights = ad.dropout(beta, dropout, training, rng)
    out = ad.elu(ad.segment_aggregate(weights, z, ctx.indices, ctx.indptr, ctx.dst))
    return out, beta


def combine_head(nab_out: Tensor, fab_out: Tensor, W_o: Tensor) -> Tensor:
    """``ELU((nab * fab) @ W_o)``."""
    if nab_out.shape != fab_out.shape:
        raise ShapeError(f"branch outputs differ: {nab_out.shape} vs {fab_out.shape}")
    return ad.elu(ad.matmul(ad.mul(nab_out, fab_out), W_o))


def multi_head(head_outputs: list[Tensor], gates: Tensor, activation: bool = True) -> Tensor:
    """``ELU((1/n) * sum_k gates[k] * h_k)``; without ``activation`` the ELU is skipped."""
    n = len(head_outputs)
    if n < 1:
        raise ContractError("need at least one head")
    if gates.shape != (n,):
        raise ShapeError(f"{n} heads but gates of shape {gates.shape}")
    total = None
    for k, h in enumerate(head_outputs):
        term = ad.mul(ad.slice_(gates, k), h)
        total = term if total is None else ad.add(total, term)
    out = ad.scale(total, 1.0 / n)
    return ad.elu(out) if activation else out


@dataclass
class AttentionState:
    """Per layer: ``beta`` (heads x E, CSR edge order), ``alpha`` (heads x C x F_l)
    and the mask ones per category and dimension."""

    src: np.ndarray
    dst: np.ndarray
    layers: list = field(default_factory=list)

    def mean_alpha(self, layer: int = 0) -> np.ndarray | None:
        a = self.layers[layer]["alpha"]
        return None if a is None else a.mean(axis=0)


def model_forward(ctx: GraphContext, params: dict[str, Tensor], config: ModelConfig,
                  training: bool = False, rng: np.random.Generator | None = None,
                  features: Tensor | None = None) -> tuple[Tensor, AttentionState]:
    """Logits (pre-softmax, N x C) and the attention coefficients of every layer."""
    if training and config.dropout > 0 and rng is None:
        raise ContractError("training with dropout needs an rng")
    p = config.dropout if training else 0.0
    H = features if features is not None else Tensor(ctx.features)
    state = AttentionState(ctx.indices, ctx.dst)
    for layer in range(config.layers):
        last = layer == config.layers - 1
        Hd = ad.dropout(H, p, training, rng)
        mu = plan = None
        if config.use_fab:
            plan = plan_fab(H.data, ctx.partition, config.pool)
            mu = masked_means(H, plan)
        heads, betas, alphas = [], [], []
        for k in range(config.heads):
            pre = f"l{layer}.h{k}."
            nab, beta = nab_forward(Hd, ctx, params[pre + "W_n"], params[pre + "a"], config.slope,
                                    p, training, rng)
            if config.use_fab:
                alpha = category_attention(mu, params[pre + "theta"], config.slope)
                alpha_full = ad.dropout(full_attention(alpha), p, training, rng)
                fab = apply_feature_attention(Hd, alpha_full, ctx.partition, params[pre + "W_f"])
                alphas.append(alpha.data)
            else:
                fab = Tensor(np.ones(nab.shape))
            heads.append(combine_head(nab, fab, params[pre + "W_o"]))
            betas.append(beta.data)
        H = multi_head(heads, params[f"l{layer}.gates"], activation=not last)
        state.layers.append({
            "beta": np.stack(betas),
            "alpha": np.stack(alphas) if alphas else None,
            "mask_ones": plan.counts.copy() if plan is not None else None,
        })
    return H, state


def loss(logits: Tensor, labels, train_nodes) -> Tensor:
    """Mean cross-entropy over the training nodes."""
    y = labels.labels if isinstance(labels, LabelSet) else np.asarray(labels)
    nodes = np.asarray(train_nodes, dtype=np.int64)
    if nodes.size == 0:
        raise ContractError("loss needs at least one training node")
    return ad.cross_entropy(logits, y, nodes)
