"""Adam with the two learning-rate schedules used for training.

``linear``: the rate falls linearly to zero over ``total_steps`` and weight
decay is decoupled from the gradient (applied directly to the weights).
``exponential``: the rate is multiplied by ``decay_rate`` every
``decay_steps`` updates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigurationError, ContractError
from .params import ParamStore

SCHEDULES = ("constant", "linear", "exponential")


@dataclass
class AdamState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 0.0
    schedule: str = "constant"
    total_steps: int | None = None
    decay_rate: float = 0.96
    decay_steps: int = 5000
    staircase: bool = True
    decay_exclude: tuple = ("bias", "gain")
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.schedule not in SCHEDULES:
            raise ConfigurationError(f"unknown schedule {self.schedule!r}")
        if self.learning_rate <= 0:
            raise ConfigurationError("learning_rate must be positive")

    def lr_at(self, step: int) -> float:
        base = self.learning_rate
        if self.schedule == "exponential":
            exponent = step / self.decay_steps
            if self.staircase:
                exponent = np.floor(exponent)
            return base * self.decay_rate ** exponent
        if self.schedule == "linear" and self.total_steps:
            return base * max(0.0, 1.0 - step / self.total_steps)
        return base

    @property
    def current_lr(self) -> float:
        return self.lr_at(self.step)


def adam_step(params: ParamStore, grads: dict | None, state: AdamState) -> ParamStore:
    """One bias-corrected Adam update, in place. ``grads`` maps names to arrays;
    when None, each tensor's accumulated ``.grad`` is used."""
    t = state.step + 1
    lr = state.lr_at(state.step)
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    updates = {}
    for name, p in params.items():
        g = p.grad if grads is None else grads.get(name)
        if g is None:
            raise ContractError(f"adam_step: missing gradient for {name!r}")
        if g.shape != p.shape:
            raise ContractError(f"adam_step: gradient for {name!r} has shape {g.shape}, want {p.shape}")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * (g * g)
        step = (m / c1) / (np.sqrt(v / c2) + state.epsilon)
        if state.weight_decay and not any(s in name for s in state.decay_exclude):
            step = step + state.weight_decay * p.data
        updates[name] = (p.data - lr * step).astype(p.dtype, copy=False), m, v
    for name, (new, m, v) in updates.items():
        params[name].data = new
        state.m[name] = m
        state.v[name] = v
    state.step = t
    return params


def clip_grad_norm(params: ParamStore, max_norm: float) -> float:
    """Rescale accumulated gradients so their global L2 norm is <= max_norm."""
    total = 0.0
    for _, p in params.items():
        if p.grad is not None:
            total += float(np.sum(p.grad.astype(np.float64) ** 2))
    norm = float(np.sqrt(total))
    if norm > max_norm > 0:
        factor = max_norm / (norm + 1e-12)
        for _, p in params.items():
            if p.grad is not None:
                p.grad = p.grad * factor
    return norm
