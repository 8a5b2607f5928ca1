"""Training loop glue: per-sample objective assembly and the overfit run."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import diffusion as dif
from .config import RunConfig
from .gradcheck import max_rel_error  # noqa: F401  (re-exported for suites)
from .identity import qformer_lite, sample_reference
from .model import ModelParams, init_model_params, model_forward
from .optim import AdamConfig, AdamState, adam_step, collect_grads, zero_grads
from .rng import STREAM_TRAIN, Rng
from .synth import SynthBatch, gen_synthetic_batch
from .tensor import Tensor, backward


@dataclass
class LossBreakdown:
    l_diff: Tensor
    l_face: Tensor
    l_back: Tensor
    l_p: Tensor
    l_total: Tensor
    weight: float

    def as_floats(self) -> dict[str, float]:
        return {
            "L_diff": self.l_diff.item(),
            "L_face": self.l_face.item(),
            "L_back": self.l_back.item(),
            "L_p": self.l_p.item(),
            "L": self.l_total.item(),
            "w": self.weight,
        }


def compute_losses(
    params: ModelParams,
    run_cfg: RunConfig,
    batch: SynthBatch,
    t: int,
    eps: np.ndarray,
    f_image: np.ndarray,
    sched: dif.DiffusionSchedule,
    projector: dif.FeatureProjector,
) -> LossBreakdown:
    """Full objective for one sample at one timestep."""
    cfg = run_cfg.model.resolved()
    f_id = qformer_lite(batch.image_tokens, batch.face_tokens, params.id_extractor).f_id
    z0 = Tensor(batch.z0)
    eps_t = Tensor(eps)
    z_t = dif.forward_diffuse(z0, t, eps_t, sched)
    eps_hat = model_forward(
        z_t, t, Tensor(batch.text), Tensor(f_image), f_id, params.backbone, cfg
    )
    l_diff = dif.diffusion_loss(eps_t, eps_hat)
    z0_hat = dif.predict_z0(z_t, t, eps_hat, sched)
    l_face = dif.face_loss(z0_hat, z0, batch.latent_mask, projector, t, sched.timesteps)
    l_back = dif.back_loss(z0_hat, z0, batch.latent_mask, t, sched.timesteps)
    l_p = dif.perceptual_loss(l_face, l_back, run_cfg.loss_weights())
    return LossBreakdown(
        l_diff=l_diff,
        l_face=l_face,
        l_back=l_back,
        l_p=l_p,
        l_total=dif.total_loss(l_diff, l_p),
        weight=dif.cosine_weight(t, sched.timesteps),
    )


@dataclass
class TrainResult:
    initial: dict[str, float]
    final: dict[str, float]
    history: list[dict] = field(default_factory=list)
    first_step_grad_norms: dict[str, float] = field(default_factory=dict)
    params: ModelParams | None = None
    batch: SynthBatch | None = None
    fixed_t: int = 0


def make_projector(run_cfg: RunConfig) -> dif.FeatureProjector:
    cfg = run_cfg.model.resolved()
    return dif.make_feature_projector(cfg.d_latent, cfg.frames, cfg.s_h, cfg.s_w)


def run_training(
    run_cfg: RunConfig,
    log_path: str | Path | None = None,
    resample_per_step: bool = False,
) -> TrainResult:
    """Train on one fixed synthetic batch.

    By default the draw (timestep, noise, reference) is fixed once, making
    the objective deterministic across steps: with lr=0 the logged loss is
    constant.  ``resample_per_step`` redraws (t, noise) every step instead,
    which is what the sampler smoke tests need.
    """
    run_cfg.validate()
    cfg = run_cfg.model.resolved()
    sched = dif.make_schedule(run_cfg.timesteps, run_cfg.beta_start, run_cfg.beta_end)
    projector = make_projector(run_cfg)
    batch = gen_synthetic_batch(cfg, run_cfg.seed)
    params = init_model_params(cfg)
    rng = Rng(run_cfg.seed, STREAM_TRAIN)

    fixed_t = rng.integers(1, sched.timesteps + 1)
    fixed_eps = rng.normal(batch.z0.shape)
    fixed_ref = sample_reference(batch.pool, rng)

    state = AdamState()
    adam = AdamConfig(lr=run_cfg.lr)
    log_file = Path(log_path).open("w") if log_path else None
    result = TrainResult(initial={}, final={}, fixed_t=fixed_t)
    try:
        for step in range(run_cfg.steps):
            if resample_per_step:
                t = rng.integers(1, sched.timesteps + 1)
                eps = rng.normal(batch.z0.shape)
                ref = sample_reference(batch.pool, rng)
            else:
                t, eps, ref = fixed_t, fixed_eps, fixed_ref
            losses = compute_losses(params, run_cfg, batch, t, eps, ref, sched, projector)
            row = {"step": step, "t": t, **losses.as_floats()}
            result.history.append(row)
            if log_file:
                log_file.write(json.dumps(row, sort_keys=True) + "\n")
            if step == 0:
                result.initial = losses.as_floats()
            zero_grads(params)
            backward(losses.l_total)
            grads = collect_grads(params)
            if step == 0:
                result.first_step_grad_norms = {
                    name: float(np.max(np.abs(g))) for name, g in grads.items()
                }
            params = adam_step(params, grads, state, adam)
        if run_cfg.steps:
            last = result.history[-1]
            result.final = {k: v for k, v in last.items() if k not in ("step", "t")}
        result.params = params
        result.batch = batch
    finally:
        if log_file:
            log_file.close()
    return result
