"""AdamW with decoupled weight decay and a step-decay learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from dmae.tensor.core import DimensionError, Tensor


class TrainingDivergenceError(FloatingPointError):
    """A non-finite gradient reached the optimizer."""


@dataclass
class AdamWState:
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.05
    step: int = 0
    exp_avg: list = field(default_factory=list)
    exp_avg_sq: list = field(default_factory=list)


def adamw_step(params: Sequence[Tensor], grads: Sequence[Optional[np.ndarray]], state: AdamWState,
               lr: Optional[float] = None) -> AdamWState:
    """One AdamW update, in place on ``params``.

    Weight decay is applied to the weights directly (``w -= lr * wd * w``)
    rather than being added to the gradient.  Moment buffers are created on the
    first call.  ``lr`` overrides ``state.lr`` for this step (schedules).
    """
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    for g in grads:
        if g is not None and not np.all(np.isfinite(g)):
            raise TrainingDivergenceError("non-finite gradient")
    if not state.exp_avg:
        state.exp_avg = [np.zeros_like(p.data) for p in params]
        state.exp_avg_sq = [np.zeros_like(p.data) for p in params]
    elif len(state.exp_avg) != len(params):
        raise ValueError("optimizer state was built for a different parameter list")

    lr = state.lr if lr is None else lr
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    bias1 = 1.0 - b1 ** state.step
    bias2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.exp_avg, state.exp_avg_sq):
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.shape or m.shape != p.shape:
            raise DimensionError(f"gradient/moment shape mismatch for parameter {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if lr == 0.0:
            continue
        denom = np.sqrt(v / bias2) + state.eps
        p.data *= 1.0 - lr * state.weight_decay
        p.data -= (lr / bias1) * m / denom
    return state


class AdamW:
    """Small stateful wrapper binding a parameter list to :func:`adamw_step`."""

    def __init__(self, params: Sequence[Tensor], lr: float = 3e-4, betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.05, schedule: Optional["StepDecay"] = None):
        self.params = list(params)
        self.state = AdamWState(lr=lr, beta1=betas[0], beta2=betas[1], eps=eps, weight_decay=weight_decay)
        self.schedule = schedule

    def current_lr(self) -> float:
        if self.schedule is None:
            return self.state.lr
        return self.schedule(self.state.step, self.state.lr)

    def step(self) -> float:
        lr = self.current_lr()
        adamw_step(self.params, [p.grad for p in self.params], self.state, lr=lr)
        return lr

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


@dataclass(frozen=True)
class StepDecay:
    """Multiply the rate by ``factor`` every ``interval`` steps until ``until``."""

    interval: int = 2000
    until: int = 6000
    factor: float = 0.5

    def __call__(self, step: int, base_lr: float) -> float:
        drops = min(step, self.until) // self.interval if self.interval > 0 else 0
        return base_lr * math.pow(self.factor, drops)
