"""Plumbing sampler: strided ancestral reverse diffusion.

This exists to smoke-test trained models end to end, not to reproduce any
particular inference scheme.  Each visited timestep reconstructs the clean
latent from the noise estimate and steps to the previous visited timestep
with the matching posterior noise level.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .diffusion import DiffusionSchedule
from .rng import Rng
from .tensor import NonFiniteError, Tensor


def sample_timesteps(timesteps: int, steps: int) -> list[int]:
    """Descending visited timesteps, evenly spaced, always starting at T."""
    if not 1 <= steps <= timesteps:
        raise ValueError(f"steps must be in [1, {timesteps}], got {steps}")
    ts = np.unique(np.round(np.linspace(timesteps, 1, steps)).astype(int))
    return [int(t) for t in ts[::-1]]


def sample_ancestral(
    eps_fn: Callable[[Tensor, int], Tensor],
    shape: tuple[int, ...],
    sched: DiffusionSchedule,
    rng: Rng,
    steps: int,
) -> np.ndarray:
    """Draw initial noise, then denoise along the strided timestep ladder.

    ``eps_fn`` maps (z_t, t) to the model's noise estimate.  Raises on any
    non-finite intermediate.
    """
    z = rng.normal(shape)
    visited = sample_timesteps(sched.timesteps, steps)
    nexts = visited[1:] + [0]
    for t, t_prev in zip(visited, nexts):
        eps_hat = eps_fn(Tensor(z), t).data
        ab_t = sched.alpha_bar(t)
        z0 = (z - np.sqrt(1.0 - ab_t) * eps_hat) / np.sqrt(ab_t)
        if t_prev == 0:
            z = z0
        else:
            ab_prev = sched.alpha_bar(t_prev)
            var = (1.0 - ab_prev) / (1.0 - ab_t) * (1.0 - ab_t / ab_prev)
            var = max(var, 0.0)
            mean = np.sqrt(ab_prev) * z0 + np.sqrt(max(1.0 - ab_prev - var, 0.0)) * eps_hat
            z = mean + np.sqrt(var) * rng.normal(shape)
        if not np.all(np.isfinite(z)):
            raise NonFiniteError(f"non-finite latent at timestep {t}")
    return z
