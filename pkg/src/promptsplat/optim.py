"""Bias-corrected Adam over named parameter groups.

The epsilon sits outside the square root: step = m_hat / (sqrt(v_hat) + eps).
State is a pair of moment arrays per parameter plus a shared step counter,
all serializable for bit-exact training resumption.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0

    def ensure(self, name: str, shape) -> None:
        if name not in self.m:
            self.m[name] = np.zeros(shape, dtype=np.float64)
            self.v[name] = np.zeros(shape, dtype=np.float64)


def adam_step(
    params: dict,
    grads: dict,
    state: AdamState,
    lr: float,
    betas=(0.9, 0.999),
    eps: float = 1e-15,
    lr_scales: dict | None = None,
) -> None:
    """One in-place Adam update over every named parameter with a gradient.

    lr_scales optionally multiplies the learning rate per parameter name.
    """
    b1, b2 = betas
    state.step += 1
    t = state.step
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    for name, g in grads.items():
        if g is None:
            continue
        p = params[name]
        state.ensure(name, p.shape)
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        step_lr = lr * (lr_scales.get(name, 1.0) if lr_scales else 1.0)
        p -= step_lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
