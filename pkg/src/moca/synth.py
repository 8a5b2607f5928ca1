"""Deterministic synthetic fixtures: latents, text tokens, identity pools,
and rectangular face masks.

Everything is derived from (config, seed) through named streams, so a batch
is bit-reproducible across processes.  Pixel masks are per-frame axis-aligned
rectangles covering 10-40% of the frame; the pool holds five perturbed
references per identity.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor_io
from .diffusion import interpolate_mask
from .identity import FacePool, SynthEncoderConfig, synth_encoders
from .model import ModelConfig
from .rng import STREAM_DATA, Rng

POOL_SIZE = 5
PIXELS_PER_CELL = 2  # pixel mask resolution relative to the latent grid
COVER_MIN, COVER_MAX = 0.10, 0.40


@dataclass
class SynthBatch:
    z0: np.ndarray  # [F*S, d_latent]
    text: np.ndarray  # [l_txt, d_model]
    identity_vector: np.ndarray  # [d_seed]
    image_tokens: np.ndarray  # [l_img, d_enc]
    face_tokens: np.ndarray  # [l_face, d_enc]
    pool: FacePool
    pixel_mask: np.ndarray  # [F, H, W] binary
    latent_mask: np.ndarray  # [F*S] binary
    identity_id: int
    seed: int


def _rect_choices(h: int, w: int) -> list[tuple[int, int]]:
    area = h * w
    return [
        (rh, rw)
        for rh in range(1, h + 1)
        for rw in range(1, w + 1)
        if COVER_MIN <= (rh * rw) / area <= COVER_MAX
    ]


def make_rect_mask(frames: int, h: int, w: int, rng: Rng) -> np.ndarray:
    """Per-frame rectangle with area fraction inside [COVER_MIN, COVER_MAX]."""
    choices = _rect_choices(h, w)
    if not choices:
        raise ValueError(f"no rectangle on a {h}x{w} grid covers {COVER_MIN}-{COVER_MAX}")
    mask = np.zeros((frames, h, w), dtype=np.float64)
    for f in range(frames):
        rh, rw = choices[rng.choice(len(choices))]
        top = rng.integers(0, h - rh + 1)
        left = rng.integers(0, w - rw + 1)
        mask[f, top : top + rh, left : left + rw] = 1.0
    return mask


def make_face_pool(identity_vector: np.ndarray, spatial: int, d_latent: int, rng: Rng) -> FacePool:
    """Five perturbed copies of the identity's base latent, as stand-in
    reference crops from different frames."""
    d_seed = identity_vector.shape[0]
    base_map = rng.normal((d_seed, spatial * d_latent), scale=1.0 / np.sqrt(d_seed))
    base = (identity_vector @ base_map).reshape(spatial, d_latent)
    entries = [base + 0.1 * rng.normal((spatial, d_latent)) for _ in range(POOL_SIZE)]
    return FacePool(entries=entries, frame_indices=list(range(POOL_SIZE)))


def encoder_config(cfg: ModelConfig) -> SynthEncoderConfig:
    cfg = cfg.resolved()
    return SynthEncoderConfig(
        d_seed=cfg.d_seed, d_enc=cfg.d_enc, l_img=cfg.l_img, l_face=cfg.l_face
    )


def gen_synthetic_batch(cfg: ModelConfig, seed: int, identity_id: int = 0) -> SynthBatch:
    cfg = cfg.resolved()
    rng = Rng(seed, STREAM_DATA).split(identity_id)
    s = cfg.spatial
    z0 = rng.normal((cfg.frames * s, cfg.d_latent))
    text = rng.normal((cfg.l_txt, cfg.d_model))
    identity_vector = rng.normal((cfg.d_seed,))
    image_tokens, face_tokens = synth_encoders(identity_vector, encoder_config(cfg))
    pool = make_face_pool(identity_vector, s, cfg.d_latent, rng.split(1))
    h, w = PIXELS_PER_CELL * cfg.s_h, PIXELS_PER_CELL * cfg.s_w
    pixel_mask = make_rect_mask(cfg.frames, h, w, rng.split(2))
    latent_mask = interpolate_mask(pixel_mask, cfg.s_h, cfg.s_w)
    return SynthBatch(
        z0=z0,
        text=text,
        identity_vector=identity_vector,
        image_tokens=image_tokens,
        face_tokens=face_tokens,
        pool=pool,
        pixel_mask=pixel_mask,
        latent_mask=latent_mask,
        identity_id=identity_id,
        seed=seed,
    )


def save_identity_fixture(directory, batch: SynthBatch) -> None:
    """Tensor files plus a JSON sidecar describing provenance."""
    directory = Path(directory)
    tensors = {
        "z0": batch.z0,
        "text": batch.text,
        "identity_vector": batch.identity_vector,
        "image_tokens": batch.image_tokens,
        "face_tokens": batch.face_tokens,
        "pixel_mask": batch.pixel_mask,
        "latent_mask": batch.latent_mask,
    }
    for i, entry in enumerate(batch.pool.entries):
        tensors[f"pool.{i}"] = entry
    tensor_io.save_named_tensors(directory, tensors)
    sidecar = {
        "identity_id": batch.identity_id,
        "seed": batch.seed,
        "pool_size": len(batch.pool),
    }
    (directory / "identity.json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))


def load_identity_fixture(directory) -> tuple[dict, dict]:
    tensors, _ = tensor_io.load_named_tensors(directory)
    sidecar = json.loads((Path(directory) / "identity.json").read_text())
    return {k: t.data for k, t in tensors.items()}, sidecar
