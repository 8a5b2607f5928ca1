"""Run configuration: one validated dataclass, strict JSON round trip."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .diffusion import LossWeights
from .model import ModelConfig, config_from_dict, config_to_dict
from .tensor import ShapeError


class ConfigError(ValueError):
    """Invalid or unknown configuration content."""


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    timesteps: int = 50
    beta_start: float = 1e-4
    beta_end: float = 0.02
    face_weight: float = 2.0
    back_weight: float = 0.5
    lr: float = 1e-3
    steps: int = 300
    seed: int = 0
    precision: str = "f64"
    out_dir: str = "runs"

    def loss_weights(self) -> LossWeights:
        return LossWeights(face=self.face_weight, back=self.back_weight)

    def validate(self) -> "RunConfig":
        try:
            self.model.resolved().validate()
            self.loss_weights()
        except ShapeError as e:
            raise ConfigError(str(e)) from e
        if self.timesteps < 1:
            raise ConfigError(f"timesteps must be >= 1, got {self.timesteps}")
        if not (0.0 < self.beta_start <= self.beta_end < 1.0):
            raise ConfigError(f"bad beta range ({self.beta_start}, {self.beta_end})")
        if self.lr < 0:
            raise ConfigError(f"lr must be >= 0, got {self.lr}")
        if self.steps < 0:
            raise ConfigError(f"steps must be >= 0, got {self.steps}")
        if self.precision not in ("f32", "f64"):
            raise ConfigError(f"precision must be f32 or f64, got {self.precision!r}")
        return self


def to_dict(cfg: RunConfig) -> dict:
    out = dataclasses.asdict(cfg)
    out["model"] = config_to_dict(cfg.model)
    return out


def from_dict(raw: dict) -> RunConfig:
    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    data = dict(raw)
    if "model" in data:
        try:
            data["model"] = config_from_dict(data["model"])
        except (ShapeError, TypeError) as e:
            raise ConfigError(f"bad model config: {e}") from e
    try:
        cfg = RunConfig(**data)
    except TypeError as e:
        raise ConfigError(str(e)) from e
    return cfg.validate()


def load_config(path) -> RunConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigError(f"config root must be an object, got {type(raw).__name__}")
    return from_dict(raw)


def save_config(path, cfg: RunConfig) -> None:
    Path(path).write_text(json.dumps(to_dict(cfg), indent=2, sort_keys=True))


def truncate_pools(pool_sizes, frames: int) -> tuple[int, ...]:
    """Drop pool sizes exceeding the frame count (documented, never silent:
    callers announce the truncation in configs and reports)."""
    return tuple(p for p in pool_sizes if p <= frames)


def micro_config(seed: int = 0) -> RunConfig:
    """Smallest full-path config, used by the gradient-fidelity suite."""
    model = ModelConfig(
        depth=1,
        d_model=8,
        n_heads=1,
        frames=2,
        s_h=1,
        s_w=2,
        d_latent=4,
        l_txt=2,
        pool_sizes=(1, 2),
        l_id=2,
        l_img=2,
        l_face=2,
        d_seed=4,
        seed=seed,
    )
    return RunConfig(model=model, timesteps=50, steps=0, seed=seed)


def toy_overfit_config(seed: int = 0) -> RunConfig:
    """Overfit-run config: nominal pools (2, 4, 8) truncated to the frame
    count, which leaves two experts at F=4."""
    frames = 4
    model = ModelConfig(
        depth=2,
        d_model=16,
        n_heads=1,
        frames=frames,
        s_h=2,
        s_w=2,
        d_latent=4,
        l_txt=4,
        pool_sizes=truncate_pools((2, 4, 8), frames),
        l_id=4,
        l_img=4,
        l_face=4,
        d_seed=8,
        seed=seed,
    )
    return RunConfig(model=model, timesteps=50, steps=300, lr=1e-3, seed=seed)


def ablation_base_config(seed: int = 0) -> RunConfig:
    """Sweep base: enough frames (16) for every studied pool size to apply."""
    model = ModelConfig(
        depth=1,
        d_model=16,
        n_heads=1,
        frames=16,
        s_h=2,
        s_w=2,
        d_latent=4,
        l_txt=4,
        pool_sizes=(2, 4, 8),
        l_id=4,
        l_img=4,
        l_face=4,
        d_seed=8,
        seed=seed,
    )
    return RunConfig(model=model, timesteps=50, steps=60, lr=1e-3, seed=seed)
