"""Mixture-of-cross-attention layer over temporally pooled token streams.

The layer holds C + 1 cross-attention branches against the identity
embedding: branch 0 sees the raw visual tokens and always contributes with
weight 1; branches 1..C each see the token stream pooled over groups of
``pool_sizes[i]`` consecutive frames and are blended by router gates
computed from the tokens themselves.  Pooled branch outputs are repeated
back to full frame count (nearest-neighbor in time) before the weighted

sum, so the layer is shape-preserving and purely additive:

    out = shared(tokens) + sum_i gate_i * unpool(expert_i(pool_i(tokens)))
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor_io
from .params import ParamBlock
from .rng import Rng
from .tensor import (
    ShapeError,
    Tensor,
    _make,
    matmul,
    mean_rows,
    reshape,
    scale_by_scalar,
    scaled_dot_attention,
    slice_rows,
    softmax_rows,
)


@dataclass(frozen=True)
class TokenLayout:
    """Row layout of a visual token block: row = frame * spatial + position."""

    frames: int
    spatial: int
    width: int

    def rows(self) -> int:
        return self.frames * self.spatial

    def check(self, tokens: Tensor) -> None:
        if tokens.shape != (self.rows(), self.width):
            raise ShapeError(
                f"tokens {list(tokens.shape)} do not match layout "
                f"[{self.frames}*{self.spatial}, {self.width}]"
            )


def num_groups(frames: int, p: int) -> int:
    return math.ceil(frames / p)


def htp_pool(tokens: Tensor, layout: TokenLayout, p: int) -> Tensor:
    """Mean over groups of p consecutive frames, per position and channel.

    A final partial group of size ``frames % p`` is averaged over its actual
    size, which keeps frame-constant inputs exactly invariant.
    """
    if p < 1:
        raise ShapeError(f"pool size must be >= 1, got {p}")
    layout.check(tokens)
    f, s, d = layout.frames, layout.spatial, layout.width
    g = num_groups(f, p)
    frames_view = tokens.data.reshape(f, s, d)
    out = np.empty((g, s, d), dtype=tokens.data.dtype)
    if p == 1:
        out[:] = frames_view
    else:
        for i in range(g):
            block = frames_view[i * p : min((i + 1) * p, f)]
            # anchor + residual mean: bit-exact on frame-constant blocks,
            # where a plain running mean picks up rounding from k*x/k
            out[i] = block[0] + (block - block[0]).mean(axis=0)

    def vjp(grad):
        gg = grad.reshape(g, s, d)
        gx = np.zeros((f, s, d), dtype=tokens.data.dtype)
        for i in range(g):
            lo, hi = i * p, min((i + 1) * p, f)
            gx[lo:hi] = gg[i] / (hi - lo)
        tokens.accumulate_grad(gx.reshape(f * s, d))

    return _make(out.reshape(g * s, d), (tokens,), vjp)


def htp_unpool(pooled: Tensor, layout: TokenLayout, p: int) -> Tensor:
    """Repeat each pooled frame's tokens over its source group of frames."""
    if p < 1:
        raise ShapeError(f"pool size must be >= 1, got {p}")
    f, s, d = layout.frames, layout.spatial, layout.width
    g = num_groups(f, p)
    if pooled.shape != (g * s, d):
        raise ShapeError(
            f"pooled {list(pooled.shape)} does not match {g} groups of [{s}, {d}]"
        )
    groups_view = pooled.data.reshape(g, s, d)
    frame_to_group = np.arange(f) // p
    out = groups_view[frame_to_group]

    def vjp(grad):
        gg = grad.reshape(f, s, d)
        gp = np.zeros((g, s, d), dtype=pooled.data.dtype)
        np.add.at(gp, frame_to_group, gg)
        pooled.accumulate_grad(gp.reshape(g * s, d))

    return _make(out.reshape(f * s, d), (pooled,), vjp)


@dataclass
class MocaParams(ParamBlock):
    """Projections for the shared branch (index 0), C experts, and the router."""

    w_q: Tensor  # [d_model, d_attn], shared by all branches
    branch_k: list[Tensor]  # C+1 of [d_id, d_attn]
    branch_v: list[Tensor]  # C+1 of [d_id, d_attn]
    branch_out: list[Tensor]  # C+1 of [d_attn, d_model]
    router: Tensor  # [d_model, C], no bias
    pool_sizes: tuple[int, ...] = ()

    def __post_init__(self):
        self.pool_sizes = tuple(int(p) for p in self.pool_sizes)
        validate_pool_sizes(self.pool_sizes)
        c = len(self.pool_sizes)
        for name, lst in (
            ("branch_k", self.branch_k),
            ("branch_v", self.branch_v),
            ("branch_out", self.branch_out),
        ):
            if len(lst) != c + 1:
                raise ShapeError(f"{name} must hold {c + 1} tensors, got {len(lst)}")
        if self.router.shape[1] != c:
            raise ShapeError(f"router width {self.router.shape[1]} != expert count {c}")

    @property
    def n_experts(self) -> int:
        return len(self.pool_sizes)


def validate_pool_sizes(pool_sizes) -> None:
    sizes = tuple(int(p) for p in pool_sizes)
    if any(p < 1 for p in sizes):
        raise ShapeError(f"pool sizes must be >= 1, got {list(sizes)}")
    if any(b <= a for a, b in zip(sizes, sizes[1:])):
        raise ShapeError(f"pool sizes must be strictly increasing, got {list(sizes)}")


def init_moca_params(
    d_model: int, d_id: int, d_attn: int, pool_sizes, rng: Rng, router_scale: float = 0.01
) -> MocaParams:
    validate_pool_sizes(pool_sizes)
    c = len(pool_sizes)

    def mat(shape, fan_in):
        return Tensor(rng.normal(shape, scale=1.0 / np.sqrt(fan_in)), requires_grad=True)

    return MocaParams(
        w_q=mat((d_model, d_attn), d_model),
        branch_k=[mat((d_id, d_attn), d_id) for _ in range(c + 1)],
        branch_v=[mat((d_id, d_attn), d_id) for _ in range(c + 1)],
        branch_out=[mat((d_attn, d_model), d_attn) for _ in range(c + 1)],
        # near-uniform gates at init; exact zeros are reserved for tests
        router=Tensor(rng.normal((d_model, c), scale=router_scale), requires_grad=True),
        pool_sizes=tuple(pool_sizes),
    )


def branch_attention(
    tokens: Tensor, f_id: Tensor, w_q: Tensor, w_k: Tensor, w_v: Tensor, w_out: Tensor
) -> Tensor:
    """One cross-attention branch: project, attend to the identity tokens,
    project back to model width."""
    q = matmul(tokens, w_q)
    k = matmul(f_id, w_k)
    v = matmul(f_id, w_v)
    return matmul(scaled_dot_attention(q, k, v), w_out)


def router_gates(tokens: Tensor, router: Tensor) -> Tensor:
    """Gates over experts: softmax of the token-mean projected by the router.

    Output lies on the simplex: every gate in [0, 1], sum exactly 1 up to
    rounding.  A zero router weight yields exactly uniform gates.
    """
    pooled = reshape(mean_rows(tokens), (1, tokens.shape[1]))
    logits = matmul(pooled, router)
    return reshape(softmax_rows(logits), (router.shape[1],))


def moca_forward(
    tokens: Tensor,
    f_id: Tensor,
    p: MocaParams,
    layout: TokenLayout,
    gates: Tensor | np.ndarray | None = None,
) -> Tensor:
    """Shared branch plus gate-weighted temporal experts; shape-preserving.

    ``gates`` overrides the router (test hook); a gate of exactly 0.0 in an
    override skips that expert so the degenerate case is bit-exact.
    """
    layout.check(tokens)
    shared = branch_attention(
        tokens, f_id, p.w_q, p.branch_k[0], p.branch_v[0], p.branch_out[0]
    )
    if gates is None:
        gates = router_gates(tokens, p.router)
    elif not isinstance(gates, Tensor):
        gates = Tensor(gates)
    if gates.shape != (p.n_experts,):
        raise ShapeError(f"gates shape {list(gates.shape)} != [{p.n_experts}]")

    out = shared
    for i, pool_size in enumerate(p.pool_sizes):
        gate_i = slice_rows(gates, i, i + 1)
        if not gate_i.requires_grad and float(gate_i.data[0]) == 0.0:
            continue
        pooled = htp_pool(tokens, layout, pool_size)
        expert = branch_attention(
            pooled, f_id, p.w_q, p.branch_k[i + 1], p.branch_v[i + 1], p.branch_out[i + 1]
        )
        out = out + scale_by_scalar(htp_unpool(expert, layout, pool_size), gate_i)
    return out


def save_moca_params(directory, p: MocaParams) -> None:
    from .params import named_parameters

    tensors = dict(named_parameters(p))
    tensor_io.save_named_tensors(
        directory,
        tensors,
        extra={
            "n_experts": p.n_experts,
            "pool_sizes": list(p.pool_sizes),
            "d_attn": p.w_q.shape[1],
        },
    )


def load_moca_params(directory) -> MocaParams:
    tensors, manifest = tensor_io.load_named_tensors(directory)
    c = int(manifest["n_experts"])

    def grad(name):
        t = tensors[name]
        return Tensor(t.data, requires_grad=True, name=name)

    return MocaParams(
        w_q=grad("w_q"),
        branch_k=[grad(f"branch_k.{i}") for i in range(c + 1)],
        branch_v=[grad(f"branch_v.{i}") for i in range(c + 1)],
        branch_out=[grad(f"branch_out.{i}") for i in range(c + 1)],
        router=grad("router"),
        pool_sizes=tuple(manifest["pool_sizes"]),
    )


def describe_moca(directory) -> dict:
    manifest = json.loads((Path(directory) / "manifest.json").read_text())
    return {k: manifest[k] for k in ("n_experts", "pool_sizes", "d_attn")}
