"""AdamW with decoupled weight decay scaled by the learning rate."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class NonFiniteGradient(FloatingPointError):
    pass


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: dict = field(default_factory=dict)


def adamw_step(params: dict, grads: dict, state: AdamState, lr: dict, wd: dict,
               beta1: float = 0.9, beta2: float = 0.95, eps: float = 1e-8) -> None:
    """One in-place update of every parameter that has a gradient.

    ``lr`` and ``wd`` hold the effective per-parameter values for this step.
    Decay is applied first as ``theta -= lr * wd * theta``, then the
    bias-corrected Adam step.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient for {name}")
    for name, g in grads.items():
        theta = params[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(theta)
            state.v[name] = np.zeros_like(theta)
            state.step[name] = 0
        state.step[name] += 1
        t = state.step[name]
        m, v = state.m[name], state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        lr_i, wd_i = lr[name], wd[name]
        if wd_i:
            theta *= 1.0 - lr_i * wd_i
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        theta -= lr_i * m_hat / (np.sqrt(v_hat) + eps)
