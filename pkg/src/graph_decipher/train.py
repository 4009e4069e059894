"""Full-batch training with early stopping, and evaluation metrics."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from .errors import ContractError, NumericError
from .graph import Dataset, Split
from .model import GraphContext, ModelConfig, init_params, loss, model_forward
from .optim import Adam

log = logging.getLogger(__name__)


class TrainingDiverged(NumericError):
    pass


@dataclass
class History:
    train_loss: list = field(default_factory=list)
    val_acc: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_epoch: int = -1

    @property
    def epochs_run(self) -> int:
        return len(self.train_loss)


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _val_stats(logits: np.ndarray, y: np.ndarray, nodes: np.ndarray) -> tuple[float, float]:
    if nodes.size == 0:
        return float("nan"), float("nan")
    p = _softmax(logits[nodes])
    acc = float(np.mean(p.argmax(axis=1) == y[nodes]))
    nll = float(-np.mean(np.log(np.maximum(p[np.arange(nodes.size), y[nodes]], 1e-300))))
    return acc, nll


def train(dataset: Dataset | GraphContext, split: Split, config: ModelConfig,
          params: dict[str, Tensor] | None = None) -> tuple[dict[str, Tensor], History]:
    """Train with Adam on the full graph; keep the parameters from the epoch with the
    best validation accuracy (ties broken by lower validation loss)."""
    config.validate()
    ctx = dataset if isinstance(dataset, GraphContext) else GraphContext.build(dataset, split)
    if split.train.size == 0:
        raise ContractError("training needs at least one training node")
    y = ctx.labels.labels
    if params is None:
        params = init_params(config, ctx.features.shape[1], ctx.labels.n_classes)
    history = History()
    if config.epochs == 0:
        return params, history

    opt = Adam(params, lr=config.lr, weight_decay=config.weight_decay)
    rng = np.random.default_rng([config.seed, 7])
    best_key = None
    best = {k: p.data.copy() for k, p in params.items()}
    stale = 0
    for epoch in range(config.epochs):
        opt.zero_grad()
        try:
            logits, _ = model_forward(ctx, params, config, training=True, rng=rng)
            value = loss(logits, y, split.train)
            value.backward()
        except NumericError as exc:
            raise TrainingDiverged(f"epoch {epoch}: {exc}") from exc
        opt.step()
        if not all(np.all(np.isfinite(p.data)) for p in params.values()):
            raise TrainingDiverged(f"epoch {epoch}: non-finite parameters after the update")

        eval_logits, _ = model_forward(ctx, params, config, training=False)
        val_acc, val_loss = _val_stats(eval_logits.data, y, split.val)
        history.train_loss.append(float(value.data))
        history.val_acc.append(val_acc)
        history.val_loss.append(val_loss)

        key = (val_acc, -val_loss) if split.val.size else (-float(value.data),)
        if best_key is None or key > best_key:
            best_key, stale = key, 0
            history.best_epoch = epoch
            best = {k: p.data.copy() for k, p in params.items()}
        else:
            stale += 1
            if stale >= config.patience:
                log.info("early stop at epoch %d (best %d)", epoch, history.best_epoch)
                break
    for k, p in params.items():
        p.data = best[k]
        p.grad = None
    return params, history


# ----------------------------------------------------------------------------
# metrics

@dataclass
class Metrics:
    accuracy: float
    per_class_accuracy: dict
    macro_ap: float
    n: int

    def to_dict(self) -> dict:
        return {"accuracy": self.accuracy, "per_class_accuracy": self.per_class_accuracy,
                "macro_AP": self.macro_ap, "n": self.n}


def average_precision(scores: np.ndarray, positive: np.ndarray) -> float:
    """Area under the step precision-recall curve, one point per distinct score."""
    positive = np.asarray(positive, dtype=bool)
    n_pos = int(positive.sum())
    if n_pos == 0:
        return float("nan")
    order = np.argsort(-scores, kind="stable")
    s, t = scores[order], positive[order]
    tp = np.cumsum(t)
    fp = np.cumsum(~t)
    last = np.r_[np.flatnonzero(np.diff(s) != 0), s.size - 1]
    precision = tp[last] / (tp[last] + fp[last])
    recall = tp[last] / n_pos
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


def metrics_from_scores(probs: np.ndarray, y: np.ndarray, n_classes: int) -> Metrics:
    if y.size == 0:
        raise ContractError("cannot evaluate an empty node set")
    pred = probs.argmax(axis=1)
    per_class, aps = {}, []
    for c in range(n_classes):
        sel = y == c
        if sel.any():
            per_class[c] = float(np.mean(pred[sel] == c))
            aps.append(average_precision(probs[:, c], sel))
    return Metrics(float(np.mean(pred == y)), per_class, float(np.mean(aps)), int(y.size))


def predict_proba(ctx: GraphContext, params: dict[str, Tensor], config: ModelConfig) -> np.ndarray:
    logits, _ = model_forward(ctx, params, config, training=False)
    return _softmax(logits.data)


def evaluate(params: dict[str, Tensor], dataset: Dataset | GraphContext, split: Split,
             config: ModelConfig, node_set) -> Metrics:
    ctx = dataset if isinstance(dataset, GraphContext) else GraphContext.build(dataset, split)
    nodes = np.asarray(node_set, dtype=np.int64)
    if nodes.size == 0:
        raise ContractError("cannot evaluate an empty node set")
    y = ctx.labels.labels[nodes]
    if np.any(y < 0):
        raise ContractError("evaluation nodes must be labeled")
    probs = predict_proba(ctx, params, config)[nodes]
    return metrics_from_scores(probs, y, ctx.labels.n_classes)
