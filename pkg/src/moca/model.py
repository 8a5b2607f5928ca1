"""Toy noise-prediction transformer over [text ; reference frame ; video] tokens.

Every block runs joint self-attention over the full token sequence, then a
mixture-of-cross-attention step on the visual rows only (text rows bypass it
untouched), then an MLP.  The prediction head reads the video rows for
frames 1..F; the prepended reference-frame rows are dropped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import tensor_io
from .identity import QFormerLiteParams, concat_global, init_qformer
from .layers import MocaParams, TokenLayout, init_moca_params, moca_forward, validate_pool_sizes
from .params import ParamBlock, named_parameters
from .rng import STREAM_INIT, Rng
from .tensor import (
    ShapeError,
    Tensor,
    add_row_vector,
    concat_cols,
    concat_rows,
    matmul,
    rms_norm,
    scaled_dot_attention,
    slice_cols,
    slice_rows,
    tanh,
)

MLP_RATIO = 4


@dataclass(frozen=True)
class ModelConfig:
    depth: int = 1
    d_model: int = 8
    n_heads: int = 1
    frames: int = 2
    s_h: int = 1
    s_w: int = 2
    d_latent: int = 4
    l_txt: int = 2
    pool_sizes: tuple[int, ...] = (1, 2)
    d_attn: int | None = None
    l_id: int = 2
    d_id: int | None = None
    d_enc: int | None = None
    l_img: int = 2
    l_face: int = 2
    d_seed: int = 4
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "pool_sizes", tuple(int(p) for p in self.pool_sizes))

    @property
    def spatial(self) -> int:
        return self.s_h * self.s_w

    @property
    def n_experts(self) -> int:
        return len(self.pool_sizes)

    def resolved(self) -> "ModelConfig":
        """Fill width defaults (d_attn, d_id, d_enc default to d_model)."""
        return replace(
            self,
            d_attn=self.d_attn or self.d_model,
            d_id=self.d_id or self.d_model,
            d_enc=self.d_enc or self.d_model,
        )

    def validate(self) -> None:
        for name in ("depth", "d_model", "n_heads", "frames", "s_h", "s_w", "d_latent", "l_id", "d_seed"):
            if getattr(self, name) < 1:
                raise ShapeError(f"config field {name} must be positive")
        if self.l_txt < 0 or self.l_img < 0 or self.l_face < 0:
            raise ShapeError("token counts must be non-negative")
        if self.d_model % self.n_heads != 0:
            raise ShapeError(f"d_model {self.d_model} not divisible by {self.n_heads} heads")
        validate_pool_sizes(self.pool_sizes)


@dataclass
class BlockParams(ParamBlock):
    norm_attn: Tensor  # [d_model]
    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    w_o: Tensor
    moca: MocaParams
    norm_mlp: Tensor
    w_mlp_in: Tensor  # [d_model, MLP_RATIO*d_model]
    w_mlp_out: Tensor


@dataclass
class DitParams(ParamBlock):
    w_in: Tensor  # [d_latent, d_model]
    w_head: Tensor  # [d_model, d_latent]
    blocks: list[BlockParams] = field(default_factory=list)


@dataclass
class ModelParams(ParamBlock):
    """Everything trainable: the backbone plus the identity extractor."""

    backbone: DitParams
    id_extractor: QFormerLiteParams


def init_block(cfg: ModelConfig, rng: Rng) -> BlockParams:
    d = cfg.d_model

    def mat(shape, fan_in):
        return Tensor(rng.normal(shape, scale=1.0 / np.sqrt(fan_in)), requires_grad=True)

    return BlockParams(
        norm_attn=Tensor(np.ones(d), requires_grad=True),
        w_q=mat((d, d), d),
        w_k=mat((d, d), d),
        w_v=mat((d, d), d),
        w_o=mat((d, d), d),
        moca=init_moca_params(d, cfg.d_id, cfg.d_attn, cfg.pool_sizes, rng),
        norm_mlp=Tensor(np.ones(d), requires_grad=True),
        w_mlp_in=mat((d, MLP_RATIO * d), d),
        w_mlp_out=mat((MLP_RATIO * d, d), MLP_RATIO * d),
    )


def init_model_params(cfg: ModelConfig) -> ModelParams:
    cfg = cfg.resolved()
    cfg.validate()
    rng = Rng(cfg.seed, STREAM_INIT)

    def mat(shape, fan_in):
        return Tensor(rng.normal(shape, scale=1.0 / np.sqrt(fan_in)), requires_grad=True)

    backbone = DitParams(
        w_in=mat((cfg.d_latent, cfg.d_model), cfg.d_latent),
        w_head=mat((cfg.d_model, cfg.d_latent), cfg.d_model),
        blocks=[init_block(cfg, rng) for _ in range(cfg.depth)],
    )
    qformer = init_qformer(cfg.l_id, cfg.d_id, cfg.d_enc, rng)
    return ModelParams(backbone=backbone, id_extractor=qformer)


def timestep_embedding(t: int, d: int) -> np.ndarray:
    """Sinusoidal embedding of an integer timestep into d channels."""
    half = d // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / max(half, 1))
    angles = t * freqs
    emb = np.concatenate([np.sin(angles), np.cos(angles)])
    if d % 2:
        emb = np.concatenate([emb, np.zeros(1)])
    return emb


def assemble_tokens(z_v: Tensor, text: Tensor, t_embed: np.ndarray, w_in: Tensor) -> Tensor:
    """Project visual latents to model width, add the timestep embedding to
    every visual token, and prepend the text tokens."""
    if text.shape[1] != w_in.shape[1]:
        raise ShapeError(f"text width {text.shape[1]} != model width {w_in.shape[1]}")
    vis = add_row_vector(matmul(z_v, w_in), Tensor(t_embed))
    return concat_rows([text, vis])


def self_attention(x: Tensor, bp: BlockParams, n_heads: int) -> Tensor:
    q = matmul(x, bp.w_q)
    k = matmul(x, bp.w_k)
    v = matmul(x, bp.w_v)
    if n_heads == 1:
        mixed = scaled_dot_attention(q, k, v)
    else:
        dh = x.shape[1] // n_heads
        heads = [
            scaled_dot_attention(
                slice_cols(q, h * dh, (h + 1) * dh),
                slice_cols(k, h * dh, (h + 1) * dh),
                slice_cols(v, h * dh, (h + 1) * dh),
            )
            for h in range(n_heads)
        ]
        mixed = concat_cols(heads)
    return matmul(mixed, bp.w_o)


def mlp(x: Tensor, bp: BlockParams) -> Tensor:
    return matmul(tanh(matmul(x, bp.w_mlp_in)), bp.w_mlp_out)


def dit_block(
    tokens: Tensor,
    f_id: Tensor,
    bp: BlockParams,
    l_txt: int,
    layout: TokenLayout,
    n_heads: int = 1,
    probe: Callable[[str, np.ndarray], None] | None = None,
) -> Tensor:
    """Residual self-attention, then the mixture step on visual rows only,
    then a residual MLP.  Text rows pass the mixture step untouched."""
    h = tokens + self_attention(rms_norm(tokens, bp.norm_attn), bp, n_heads)
    text_rows = slice_rows(h, 0, l_txt)
    vis_rows = slice_rows(h, l_txt, h.shape[0])
    if probe is not None:
        probe("text_pre_moca", text_rows.data)
    vis_rows = vis_rows + moca_forward(vis_rows, f_id, bp.moca, layout)
    h = concat_rows([text_rows, vis_rows])
    if probe is not None:
        probe("text_post_moca", h.data[:l_txt])
    return h + mlp(rms_norm(h, bp.norm_mlp), bp)


def model_forward(
    z_t: Tensor,
    t: int,
    text: Tensor,
    f_image: Tensor,
    f_id: Tensor,
    params: DitParams,
    cfg: ModelConfig,
    probe: Callable[[int, str, np.ndarray], None] | None = None,
) -> Tensor:
    """Predict the noise for frames 1..F from the conditioned token stream."""
    cfg = cfg.resolved()
    s = cfg.spatial
    if z_t.shape != (cfg.frames * s, cfg.d_latent):
        raise ShapeError(
            f"z_t shape {list(z_t.shape)} != [{cfg.frames}*{s}, {cfg.d_latent}]"
        )
    z_v = concat_global(z_t, f_image)
    tokens = assemble_tokens(z_v, text, timestep_embedding(t, cfg.d_model), params.w_in)
    layout = TokenLayout(cfg.frames + 1, s, cfg.d_model)
    for i, bp in enumerate(params.blocks):
        block_probe = (lambda stage, arr, i=i: probe(i, stage, arr)) if probe else None
        tokens = dit_block(tokens, f_id, bp, cfg.l_txt, layout, cfg.n_heads, block_probe)
    vis = slice_rows(tokens, cfg.l_txt + s, cfg.l_txt + (cfg.frames + 1) * s)
    return matmul(vis, params.w_head)


def save_checkpoint(directory, params: ModelParams, cfg: ModelConfig) -> None:
    tensors = dict(named_parameters(params))
    extra = {"model_config": config_to_dict(cfg)}
    tensor_io.save_named_tensors(directory, tensors, extra=extra)


def load_checkpoint(directory) -> tuple[ModelParams, ModelConfig]:
    """Rebuild params from a hashed tensor directory; hashes are verified."""
    tensors, manifest = tensor_io.load_named_tensors(directory)
    cfg = config_from_dict(manifest["model_config"])
    template = init_model_params(cfg)

    def fill(name: str, t: Tensor) -> Tensor:
        stored = tensors[name]
        if stored.shape != t.shape:
            raise ShapeError(f"checkpoint tensor {name} has shape {list(stored.shape)}")
        return Tensor(stored.data, requires_grad=True, name=name)

    from .params import map_parameters

    return map_parameters(template, fill), cfg


def config_to_dict(cfg: ModelConfig) -> dict:
    return {
        "depth": cfg.depth,
        "d_model": cfg.d_model,
        "n_heads": cfg.n_heads,
        "frames": cfg.frames,
        "s_h": cfg.s_h,
        "s_w": cfg.s_w,
        "d_latent": cfg.d_latent,
        "l_txt": cfg.l_txt,
        "pool_sizes": list(cfg.pool_sizes),
        "d_attn": cfg.d_attn,
        "l_id": cfg.l_id,
        "d_id": cfg.d_id,
        "d_enc": cfg.d_enc,
        "l_img": cfg.l_img,
        "l_face": cfg.l_face,
        "d_seed": cfg.d_seed,
        "seed": cfg.seed,
    }


def config_from_dict(d: dict) -> ModelConfig:
    known = {f.name for f in ModelConfig.__dataclass_fields__.values()}
    unknown = set(d) - known
    if unknown:
        raise ShapeError(f"unknown model config keys: {sorted(unknown)}")
    d = dict(d)
    if "pool_sizes" in d:
        d["pool_sizes"] = tuple(d["pool_sizes"])
    return ModelConfig(**d)
