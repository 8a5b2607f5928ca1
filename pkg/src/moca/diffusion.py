"""Noise schedule, forward/reverse algebra, and the training objective.

The objective is the noise-prediction error plus a masked latent perceptual
term.  The perceptual term compares the reconstructed clean latent against
the ground-truth clean latent in two regions: the face region, after a
fixed convolutional feature map and under an unsquared Frobenius norm, and
the complement region, directly on the latents under a squared norm.  Both
are damped by a cosine factor of the timestep so high-noise steps do not
dominate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .rng import Rng
from .tensor import (
    ShapeError,
    Tensor,
    conv3x3_same,
    mean_all,
    scale_rows,
    sqrt,
    sum_all,
)

SQRT_GUARD = 1e-12


@dataclass(frozen=True)
class DiffusionSchedule:
    betas: np.ndarray  # [T], noise variance added per step
    alphas: np.ndarray  # 1 - betas
    alpha_bars: np.ndarray  # cumulative products, strictly decreasing

    @property
    def timesteps(self) -> int:
        return len(self.betas)

    def alpha_bar(self, t: int) -> float:
        self._check_t(t)
        return float(self.alpha_bars[t - 1])

    def beta(self, t: int) -> float:
        self._check_t(t)
        return float(self.betas[t - 1])

    def _check_t(self, t: int) -> None:
        if not 1 <= t <= self.timesteps:
            raise ShapeError(f"timestep {t} outside [1, {self.timesteps}]")


def make_schedule(timesteps: int, beta_start: float = 1e-4, beta_end: float = 0.02) -> DiffusionSchedule:
    if timesteps < 1:
        raise ShapeError(f"timesteps must be >= 1, got {timesteps}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ShapeError(f"betas must satisfy 0 < start <= end < 1, got ({beta_start}, {beta_end})")
    betas = np.linspace(beta_start, beta_end, timesteps, dtype=np.float64)
    alphas = 1.0 - betas
    return DiffusionSchedule(betas=betas, alphas=alphas, alpha_bars=np.cumprod(alphas))


def forward_diffuse(z0: Tensor, t: int, eps: Tensor, sched: DiffusionSchedule) -> Tensor:
    """z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps."""
    if z0.shape != eps.shape:
        raise ShapeError(f"z0 {list(z0.shape)} vs eps {list(eps.shape)}")
    ab = sched.alpha_bar(t)
    return z0 * math.sqrt(ab) + eps * math.sqrt(1.0 - ab)


def predict_z0(z_t: Tensor, t: int, eps_hat: Tensor, sched: DiffusionSchedule) -> Tensor:
    """Invert the forward map under the noise estimate: exact when eps_hat
    is the true noise."""
    if z_t.shape != eps_hat.shape:
        raise ShapeError(f"z_t {list(z_t.shape)} vs eps_hat {list(eps_hat.shape)}")
    ab = sched.alpha_bar(t)
    if ab <= 0.0:
        raise ShapeError(f"degenerate cumulative alpha at t={t}")
    return (z_t - eps_hat * math.sqrt(1.0 - ab)) * (1.0 / math.sqrt(ab))


def diffusion_loss(eps: Tensor, eps_hat: Tensor) -> Tensor:
    """Mean squared error over all elements."""
    if eps.shape != eps_hat.shape:
        raise ShapeError(f"eps {list(eps.shape)} vs eps_hat {list(eps_hat.shape)}")
    diff = eps - eps_hat
    return mean_all(diff * diff)


def cosine_weight(t: int, timesteps: int) -> float:
    """cos((t / T) * pi / 2): 1 at t=0, 0 at t=T, strictly decreasing."""
    if not 0 <= t <= timesteps:
        raise ShapeError(f"timestep {t} outside [0, {timesteps}]")
    if t == timesteps:
        return 0.0  # float cos(pi/2) is ~6e-17; the endpoint is exactly zero
    return math.cos((t / timesteps) * (math.pi / 2.0))


def interpolate_mask(pixel_mask: np.ndarray, s_h: int, s_w: int) -> np.ndarray:
    """Nearest-neighbor downsample of a binary [F, H, W] mask onto the
    latent grid, one flag per latent token, top-left-of-cell rule."""
    mask = np.asarray(pixel_mask)
    if mask.ndim != 3:
        raise ShapeError(f"pixel mask must be [F, H, W], got {list(mask.shape)}")
    f, h, w = mask.shape
    if s_h < 1 or s_w < 1 or h % s_h != 0 or w % s_w != 0:
        raise ShapeError(f"latent grid ({s_h}, {s_w}) does not divide pixel grid ({h}, {w})")
    if not np.all((mask == 0) | (mask == 1)):
        raise ShapeError("pixel mask must be binary")
    cell_h, cell_w = h // s_h, w // s_w
    latent = mask[:, ::cell_h, ::cell_w]
    return latent.reshape(f * s_h * s_w).astype(np.float64)


@dataclass(frozen=True)
class FeatureProjector:
    """Fixed seeded 3x3 convolution lifting latents to a richer feature
    space before the face comparison; frozen, bias-free, so f(0) = 0."""

    kernel: np.ndarray  # [3, 3, d_latent, d_feat]
    frames: int
    s_h: int
    s_w: int

    def __call__(self, latents: Tensor) -> Tensor:
        return conv3x3_same(latents, self.kernel, self.frames, self.s_h, self.s_w)

    @property
    def d_feat(self) -> int:
        return self.kernel.shape[3]


def make_feature_projector(
    d_latent: int, frames: int, s_h: int, s_w: int, seed: int = 7, d_feat: int | None = None
) -> FeatureProjector:
    d_feat = d_feat or 2 * d_latent
    rng = Rng(seed, stream=0)
    kernel = rng.normal((3, 3, d_latent, d_feat), scale=1.0 / math.sqrt(9 * d_latent))
    return FeatureProjector(kernel=kernel, frames=frames, s_h=s_h, s_w=s_w)


def _as_mask_tensor(m, rows: int) -> Tensor:
    mask = m if isinstance(m, Tensor) else Tensor(np.asarray(m, dtype=np.float64))
    if mask.shape != (rows,):
        raise ShapeError(f"latent mask shape {list(mask.shape)} != [{rows}]")
    return mask


def face_loss(
    z0_hat: Tensor,
    z0_ref: Tensor,
    latent_mask,
    projector: FeatureProjector,
    t: int,
    timesteps: int,
) -> Tensor:
    """w(t) * || mask ⊙ (f(z0_hat) - f(z0_ref)) ||  (unsquared Frobenius).

    The square root is guarded by 1e-12 so the gradient stays finite when
    the masked difference vanishes.
    """
    if z0_hat.shape != z0_ref.shape:
        raise ShapeError(f"z0_hat {list(z0_hat.shape)} vs z0_ref {list(z0_ref.shape)}")
    mask = _as_mask_tensor(latent_mask, z0_hat.shape[0])
    diff = projector(z0_hat) - projector(z0_ref)
    masked = scale_rows(diff, mask)
    norm = sqrt(sum_all(masked * masked) + SQRT_GUARD)
    return norm * cosine_weight(t, timesteps)


def back_loss(z0_hat: Tensor, z0_ref: Tensor, latent_mask, t: int, timesteps: int) -> Tensor:
    """w(t) * || (1 - mask) ⊙ (z0_hat - z0_ref) ||^2 on the raw latents."""
    if z0_hat.shape != z0_ref.shape:
        raise ShapeError(f"z0_hat {list(z0_hat.shape)} vs z0_ref {list(z0_ref.shape)}")
    mask = _as_mask_tensor(latent_mask, z0_hat.shape[0])
    inv = -mask + 1.0
    masked = scale_rows(z0_hat - z0_ref, inv)
    return sum_all(masked * masked) * cosine_weight(t, timesteps)


@dataclass(frozen=True)
class LossWeights:
    face: float = 2.0
    back: float = 0.5

    def __post_init__(self):
        if self.face < 0 or self.back < 0:
            raise ShapeError("loss weights must be non-negative")


def perceptual_loss(l_face: Tensor, l_back: Tensor, weights: LossWeights) -> Tensor:
    return l_face * weights.face + l_back * weights.back


def total_loss(l_diff: Tensor, l_p: Tensor) -> Tensor:
    return l_diff + l_p
