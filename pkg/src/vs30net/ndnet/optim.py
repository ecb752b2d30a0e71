"""Adam optimizer with a stepped learning-rate decay schedule.

The effective learning rate is base_lr * decay_factor^k where k counts
schedule epochs that have been reached. The product is evaluated in
decimal arithmetic: repeated binary-float multiplication drifts one ulp
off the round decimal values the schedule is specified in (1e-5 * 0.9^3
!= 7.29e-6 in float64).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from decimal import Decimal

import numpy as np

from ..errors import NumericError
from .tensor import DTYPE


@dataclass
class AdamState:
    """Optimizer hyperparameters plus per-parameter moment buffers.

    m and v are keyed by parameter name; step_count is shared by all
    parameters and increments once per adam_step call.
    """

    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    base_lr: float = 1e-5
    decay_factor: float = 0.9
    decay_epochs: tuple = (5, 10, 20)
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def effective_lr(epoch: int, base_lr: float, decay_factor: float,
                 decay_epochs) -> float:
    k = sum(1 for e in decay_epochs if e <= epoch)
    return float(Decimal(repr(base_lr)) * Decimal(repr(decay_factor)) ** k)


def adam_step(params, state: AdamState, epoch: int) -> AdamState:
    """One Adam update over every trainable parameter with a gradient.

    Gradients are read from each parameter tensor's grad buffer and the
    tensors are updated in place. Parameters whose grad is None (not
    part of the current graph) are left untouched. A non-finite
    gradient aborts before any parameter is modified.
    """
    live = []
    for p in params:
        if not p.trainable or p.tensor.grad is None:
            continue
        if not np.isfinite(p.tensor.grad).all():
            raise NumericError(f"non-finite gradient for parameter '{p.name}'")
        live.append(p)

    lr = np.float32(effective_lr(epoch, state.base_lr, state.decay_factor,
                                 state.decay_epochs))
    state.step_count += 1
    t = state.step_count
    b1, b2 = np.float32(state.beta1), np.float32(state.beta2)
    eps = np.float32(state.epsilon)
    c1 = np.float32(1.0 - state.beta1 ** t)
    c2 = np.float32(1.0 - state.beta2 ** t)

    for p in live:
        g = p.tensor.grad
        m = state.m.get(p.name)
        if m is None:
            m = state.m[p.name] = np.zeros_like(p.tensor.data)
            state.v[p.name] = np.zeros_like(p.tensor.data)
        v = state.v[p.name]
        m *= b1
        m += (np.float32(1.0) - b1) * g
        v *= b2
        v += (np.float32(1.0) - b2) * (g * g)
        step = (lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(DTYPE, copy=False)
        p.tensor.data -= step
    return state
