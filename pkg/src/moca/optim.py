"""Adam with functional parameter updates and explicit state."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .params import map_parameters, named_parameters
from .tensor import NonFiniteError, Tensor


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


@dataclass(frozen=True)
class AdamConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def collect_grads(block) -> dict[str, np.ndarray]:
    """Pull accumulated gradients off a parameter block after backward()."""
    grads = {}
    for name, t in named_parameters(block):
        if t.grad is None:
            raise NonFiniteError(f"parameter {name} has no gradient")
        grads[name] = np.array(t.grad)
    return grads


def zero_grads(block) -> None:
    for _, t in named_parameters(block):
        t.zero_grad()


def adam_step(block, grads: dict[str, np.ndarray], state: AdamState, cfg: AdamConfig):
    """One Adam update; returns a new parameter block, mutates the state."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for {name}")
    state.step += 1
    k = state.step
    bc1 = 1.0 - cfg.beta1**k
    bc2 = 1.0 - cfg.beta2**k

    def update(name: str, t: Tensor) -> Tensor:
        g = grads[name]
        m = state.m.get(name, np.zeros_like(t.data, dtype=np.float64))
        v = state.v.get(name, np.zeros_like(t.data, dtype=np.float64))
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * g
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * (g * g)
        state.m[name] = m
        state.v[name] = v
        step = cfg.lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)
        return Tensor(t.data - step, requires_grad=True, name=t.name)

    return map_parameters(block, update)
