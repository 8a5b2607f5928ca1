"""Identity conditioning: reference pools, stand-in encoders, and the
learned query block that distills encoder tokens into identity embeddings.

Two conditions come out of this module.  The global one is a reference
latent prepended to the video latent as an extra leading frame.  The local
one is a compact token set produced by a single trainable cross-attention
block: learned queries attend over the concatenated image/face encoder
tokens and are projected to the model's identity width.

Real image and face encoders are out of scope here; they are replaced by
fixed seeded linear maps of an identity vector, so every fixture is
reproducible from (identity vector, seeds) alone.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .params import ParamBlock
from .rng import Rng
from .tensor import (
    ShapeError,
    Tensor,
    concat_rows,
    matmul,
    scaled_dot_attention,
    slice_rows,
)


@dataclass
class FacePool:
    """Reference-face latents, one [S, D_lat] entry per usable source frame."""

    entries: list[np.ndarray]
    frame_indices: list[int] = field(default_factory=list)

    def __post_init__(self):
        if self.entries:
            shape = self.entries[0].shape
            for e in self.entries:
                if e.shape != shape:
                    raise ShapeError("face pool entries must share one shape")
        if not self.frame_indices:
            self.frame_indices = list(range(len(self.entries)))

    def __len__(self):
        return len(self.entries)


class EmptyPoolError(ValueError):
    """Sampling from a pool with no entries."""


def sample_reference(pool: FacePool, rng: Rng) -> np.ndarray:
    """Draw one reference latent uniformly; deterministic given rng state."""
    if len(pool) == 0:
        raise EmptyPoolError("face pool is empty")
    return pool.entries[rng.choice(len(pool))]


@dataclass(frozen=True)
class SynthEncoderConfig:
    """Seeded linear stand-ins for the frozen image/face encoders."""

    d_seed: int
    d_enc: int
    l_img: int
    l_face: int
    image_seed: int = 101
    face_seed: int = 202


def _encoder_map(seed: int, d_seed: int, l_out: int, d_enc: int) -> np.ndarray:
    rng = Rng(seed, stream=0)
    return rng.normal((d_seed, l_out * d_enc), scale=1.0 / np.sqrt(d_seed))


def synth_encoders(identity_vector: np.ndarray, cfg: SynthEncoderConfig) -> tuple[np.ndarray, np.ndarray]:
    """Map one identity vector to (image tokens, face tokens).

    Both maps are bias-free fixed projections, so a zero vector maps to zero
    tokens and the same vector always maps to the same tokens.
    """
    v = np.asarray(identity_vector, dtype=np.float64)
    if v.shape != (cfg.d_seed,):
        raise ShapeError(f"identity vector shape {list(v.shape)}, expected [{cfg.d_seed}]")
    img = (v @ _encoder_map(cfg.image_seed, cfg.d_seed, cfg.l_img, cfg.d_enc)).reshape(
        cfg.l_img, cfg.d_enc
    )
    face = (v @ _encoder_map(cfg.face_seed, cfg.d_seed, cfg.l_face, cfg.d_enc)).reshape(
        cfg.l_face, cfg.d_enc
    )
    return img, face


@dataclass
class QFormerLiteParams(ParamBlock):
    """Learned queries plus one cross-attention block and output projection."""

    queries: Tensor  # [l_id, d_id]
    w_q: Tensor  # [d_id, d_attn]
    w_k: Tensor  # [d_enc, d_attn]
    w_v: Tensor  # [d_enc, d_attn]
    w_out: Tensor  # [d_attn, d_id]


def init_qformer(l_id: int, d_id: int, d_enc: int, rng: Rng) -> QFormerLiteParams:
    def mat(shape, fan_in):
        return Tensor(rng.normal(shape, scale=1.0 / np.sqrt(fan_in)), requires_grad=True)

    return QFormerLiteParams(
        queries=mat((l_id, d_id), d_id),
        w_q=mat((d_id, d_id), d_id),
        w_k=mat((d_enc, d_id), d_enc),
        w_v=mat((d_enc, d_id), d_enc),
        w_out=mat((d_id, d_id), d_id),
    )


@dataclass
class IdentityEmbedding:
    f_id: Tensor  # [l_id, d_id]
    seed: int = 0


def qformer_lite(
    image_tokens, face_tokens, params: QFormerLiteParams, seed: int = 0
) -> IdentityEmbedding:
    """Cross-attend learned queries over [image tokens ; face tokens]."""
    img = image_tokens if isinstance(image_tokens, Tensor) else Tensor(image_tokens)
    face = face_tokens if isinstance(face_tokens, Tensor) else Tensor(face_tokens)
    if img.shape[1] != face.shape[1]:
        raise ShapeError(
            f"encoder widths differ: {img.shape[1]} vs {face.shape[1]}"
        )
    if img.shape[1] != params.w_k.shape[0]:
        raise ShapeError(
            f"encoder width {img.shape[1]} does not match w_k rows {params.w_k.shape[0]}"
        )
    kv = concat_rows([img, face])
    q = matmul(params.queries, params.w_q)
    k = matmul(kv, params.w_k)
    v = matmul(kv, params.w_v)
    attended = scaled_dot_attention(q, k, v)
    return IdentityEmbedding(f_id=matmul(attended, params.w_out), seed=seed)


def concat_global(video_latent: Tensor, f_image: Tensor) -> Tensor:
    """Prepend the reference latent as frame 0 of the visual stream."""
    if f_image.data.ndim != 2 or video_latent.data.ndim != 2:
        raise ShapeError("concat_global: rank 2 operands required")
    s, d = f_image.shape
    if video_latent.shape[1] != d:
        raise ShapeError(
            f"latent widths differ: {video_latent.shape[1]} vs {d}"
        )
    if video_latent.shape[0] % s != 0:
        raise ShapeError(
            f"video rows {video_latent.shape[0]} not divisible by spatial count {s}"
        )
    return concat_rows([f_image, video_latent])


def drop_global(tokens: Tensor, spatial: int) -> Tensor:
    """Inverse of concat_global on the video part: drop the leading frame."""
    return slice_rows(tokens, spatial, tokens.shape[0])
