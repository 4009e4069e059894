"""Initialization, the adaptive-moment optimizer and a central-difference gradient checker."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .autodiff import Tensor
from .errors import ContractError, NumericError


def xavier_init(shape: Sequence[int], rng: np.random.Generator | int | None = None,
                name: str | None = None) -> Tensor:
    """Glorot-uniform tensor. A 1-D shape ``(n,)`` is treated as an ``n x 1`` matrix."""
    shape = tuple(int(s) for s in shape)
    if len(shape) == 0 or any(s <= 0 for s in shape):
        raise ContractError(f"cannot Xavier-initialize shape {shape}")
    fan_in = shape[0]
    fan_out = shape[1] if len(shape) > 1 else 1
    if len(shape) > 2:
        receptive = math.prod(shape[2:])
        fan_in, fan_out = fan_in * receptive, fan_out * receptive
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True, name=name)


@dataclass
class OptimizerState:
    lr: float = 5e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 5e-4
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: Mapping[str, Tensor], state: OptimizerState) -> None:
    """One bias-corrected adaptive-moment update followed by decoupled weight decay.

    Parameters without a gradient are left untouched (their moments still decay).
    """
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        # overflow is not an error here: the caller checks the parameters for finiteness
        with np.errstate(over="ignore", invalid="ignore"):
            p.data = p.data - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
            if state.weight_decay:
                p.data = p.data - state.lr * state.weight_decay * p.data


class Adam:
    def __init__(self, params: Mapping[str, Tensor], lr: float = 5e-3, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 5e-4):
        self.params = dict(params)
        self.state = OptimizerState(lr=lr, beta1=betas[0], beta2=betas[1], eps=eps,
                                    weight_decay=weight_decay)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        adam_step(self.params, self.state)


def grad_check(f: Callable[[Mapping[str, Tensor]], Tensor], params: Mapping[str, Tensor],
               eps: float = 1e-5) -> float:
    """Largest relative disagreement between backprop and central differences.

    ``f`` must be deterministic. The error of one parameter tensor is
    ``||analytic - numeric|| / (||analytic|| + ||numeric||)`` (0 when both vanish);
    the result is the maximum over tensors. Measuring per tensor keeps the ratio
    meaningful when gradients are small, where a per-coordinate ratio is swamped
    by the rounding noise of the differences on near-zero coordinates.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ContractError(f"eps must lie in [1e-7, 1e-3], got {eps}")
    for p in params.values():
        p.grad = None
    loss = f(params)
    loss.backward()
    analytic = {k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
                for k, p in params.items()}

    def value() -> float:
        v = float(f(params).data)
        if not math.isfinite(v):
            raise NumericError("non-finite loss during finite differencing")
        return v

    worst = 0.0
    for name, p in params.items():
        p.data = np.array(p.data, order="C")
        flat = p.data.reshape(-1)
        ana = analytic[name].reshape(-1)
        num = np.empty_like(ana)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = value()
            flat[i] = orig - eps
            down = value()
            flat[i] = orig
            num[i] = (up - down) / (2 * eps)
        scale = np.linalg.norm(ana) + np.linalg.norm(num)
        if scale > 0:
            worst = max(worst, float(np.linalg.norm(ana - num) / scale))
    return worst
