"""Dense tensor values with reverse-mode automatic differentiation.

Tensors wrap immutable numpy arrays and record the operation graph as they
are combined, micrograd-style: each result keeps its parents and a closure
that routes an upstream gradient back to them.  Calling :func:`backward` on
a scalar loss walks that graph once and accumulates ``.grad`` on every
reachable tensor that was created with ``requires_grad=True``.

Conventions enforced here and relied on elsewhere:

* values are row-major and read-only after construction;
* every public operation checks its result is finite and raises
  :class:`NonFiniteError` otherwise;
* verification runs in float64 (``set_precision("f64")``, the default);
  float32 is available as a fast mode but is too noisy for gradient checks;
* no implicit broadcasting -- the few broadcast-like patterns the layers
  need (row vectors, per-row scaling) are explicit ops.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "NonFiniteError",
    "set_precision",
    "precision",
    "active_dtype",
    "backward",
    "add_row_vector",
    "scale_rows",
    "scale_by_scalar",
    "matmul",
    "transpose",
    "sum_all",
    "mean_all",
    "mean_rows",
    "softmax_rows",
    "sqrt",
    "tanh",
    "concat_rows",
    "concat_cols",
    "slice_rows",
    "slice_cols",
    "reshape",
    "rms_norm",
    "conv3x3_same",
    "scaled_dot_attention",
]


class ShapeError(ValueError):
    """Operand shapes violate an operation's contract."""


class NonFiniteError(FloatingPointError):
    """A value entering or leaving a public operation is not finite."""


_PRECISIONS = {"f32": np.float32, "f64": np.float64}
_dtype = np.float64


def set_precision(mode: str) -> None:
    """Select the dtype used for newly constructed leaf tensors."""
    global _dtype
    if mode not in _PRECISIONS:
        raise ValueError(f"precision must be one of {sorted(_PRECISIONS)}, got {mode!r}")
    _dtype = _PRECISIONS[mode]


def precision() -> str:
    return "f64" if _dtype is np.float64 else "f32"


def active_dtype() -> np.dtype:
    return np.dtype(_dtype)


def _check_finite(arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError("non-finite value in tensor")


class Tensor:
    """Immutable dense array node on the autodiff graph."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        arr = np.array(data, dtype=_dtype)
        _check_finite(arr)
        arr.setflags(write=False)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype)
        else:
            self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    # arithmetic sugar; strict shapes, scalars allowed on * and +
    def __add__(self, other):
        if isinstance(other, (int, float)):
            return _add_const(self, float(other))
        return _add(self, other)

    def __radd__(self, other):
        return self.__add__(other)

    def __sub__(self, other):
        if isinstance(other, (int, float)):
            return _add_const(self, -float(other))
        return _add(self, _neg(other))

    def __rsub__(self, other):
        return _add_const(_neg(self), float(other))

    def __neg__(self):
        return _neg(self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return _scale(self, float(other))
        return _mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={list(self.shape)}, dtype={self.data.dtype}{tag})"


def _make(arr: np.ndarray, parents: Sequence[Tensor], vjp) -> Tensor:
    """Wrap an op result without re-casting its dtype."""
    _check_finite(arr)
    if arr.base is not None or not arr.flags.owndata:
        arr = arr.copy()
    arr.setflags(write=False)
    out = Tensor.__new__(Tensor)
    out.data = arr
    out.grad = None
    out.name = ""
    grad_parents = tuple(p for p in parents if p.requires_grad)
    out.requires_grad = bool(grad_parents)
    out._parents = grad_parents
    out._vjp = vjp if grad_parents else None
    return out


def constant(data, name: str = "") -> Tensor:
    return Tensor(data, requires_grad=False, name=name)


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(tensor) into ``.grad`` over the recorded graph.

    The walk is deterministic given the graph, so repeating it from the same
    forward pass reproduces gradients bit-for-bit.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward() needs a scalar loss, got shape {list(loss.shape)}")
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, Iterable[Tensor]]] = [(loss, iter(loss._parents))]
    seen.add(id(loss))
    while stack:
        node, it = stack[-1]
        for parent in it:
            if id(parent) not in seen:
                seen.add(id(parent))
                stack.append((parent, iter(parent._parents)))
                break
        else:
            topo.append(node)
            stack.pop()
    loss.accumulate_grad(np.ones_like(loss.data))
    for node in reversed(topo):
        if node._vjp is not None:
            node._vjp(node.grad)


# ---------------------------------------------------------------------------
# elementwise and structural ops


def _require_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {list(a.shape)} and {list(b.shape)} differ")


def _add(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "add")

    def vjp(g):
        if a.requires_grad:
            a.accumulate_grad(g)
        if b.requires_grad:
            b.accumulate_grad(g)

    return _make(a.data + b.data, (a, b), vjp)


def _add_const(a: Tensor, c: float) -> Tensor:
    def vjp(g):
        a.accumulate_grad(g)

    return _make(a.data + a.data.dtype.type(c), (a,), vjp)


def _neg(a: Tensor) -> Tensor:
    def vjp(g):
        a.accumulate_grad(-g)

    return _make(-a.data, (a,), vjp)


def _mul(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "mul")

    def vjp(g):
        if a.requires_grad:
            a.accumulate_grad(g * b.data)
        if b.requires_grad:
            b.accumulate_grad(g * a.data)

    return _make(a.data * b.data, (a, b), vjp)


def _scale(a: Tensor, c: float) -> Tensor:
    def vjp(g):
        a.accumulate_grad(g * a.data.dtype.type(c))

    return _make(a.data * a.data.dtype.type(c), (a,), vjp)


def add_row_vector(x: Tensor, v: Tensor) -> Tensor:
    """Add a length-n vector to every row of an [m, n] tensor."""
    if x.data.ndim != 2 or v.data.ndim != 1 or x.shape[1] != v.shape[0]:
        raise ShapeError(f"add_row_vector: {list(x.shape)} + {list(v.shape)}")

    def vjp(g):
        if x.requires_grad:
            x.accumulate_grad(g)
        if v.requires_grad:
            v.accumulate_grad(g.sum(axis=0))

    return _make(x.data + v.data[None, :], (x, v), vjp)


def scale_rows(x: Tensor, v: Tensor) -> Tensor:
    """Multiply row i of an [m, n] tensor by v[i]."""
    if x.data.ndim != 2 or v.data.ndim != 1 or x.shape[0] != v.shape[0]:
        raise ShapeError(f"scale_rows: {list(x.shape)} by {list(v.shape)}")

    def vjp(g):
        if x.requires_grad:
            x.accumulate_grad(g * v.data[:, None])
        if v.requires_grad:
            v.accumulate_grad((g * x.data).sum(axis=1))

    return _make(x.data * v.data[:, None], (x, v), vjp)


def scale_by_scalar(x: Tensor, s: Tensor) -> Tensor:
    """Multiply a whole tensor by a single-element tensor."""
    if s.data.size != 1:
        raise ShapeError(f"scale_by_scalar: scalar has shape {list(s.shape)}")
    sval = s.data.reshape(())

    def vjp(g):
        if x.requires_grad:
            x.accumulate_grad(g * sval)
        if s.requires_grad:
            s.accumulate_grad(np.array((g * x.data).sum(), dtype=s.data.dtype).reshape(s.shape))

    return _make(x.data * sval, (x, s), vjp)


def _matmul_vjp(a_data: np.ndarray, b_data: np.ndarray, g: np.ndarray):
    """Gradients of g wrt both matmul operands (kept patchable for canaries)."""
    return g @ b_data.T, a_data.T @ g


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError("matmul: operands must be rank 2")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dims {a.shape[1]} and {b.shape[0]} differ")

    def vjp(g):
        ga, gb = _matmul_vjp(a.data, b.data, g)
        if a.requires_grad:
            a.accumulate_grad(ga)
        if b.requires_grad:
            b.accumulate_grad(gb)

    return _make(a.data @ b.data, (a, b), vjp)


def transpose(x: Tensor) -> Tensor:
    if x.data.ndim != 2:
        raise ShapeError("transpose: rank 2 only")

    def vjp(g):
        x.accumulate_grad(g.T)

    return _make(x.data.T, (x,), vjp)


def sum_all(x: Tensor) -> Tensor:
    def vjp(g):
        x.accumulate_grad(np.full_like(x.data, g.reshape(())))

    return _make(np.array(x.data.sum(), dtype=x.data.dtype), (x,), vjp)


def mean_all(x: Tensor) -> Tensor:
    n = x.data.size
    if n == 0:
        raise ShapeError("mean_all: empty tensor")

    def vjp(g):
        x.accumulate_grad(np.full_like(x.data, g.reshape(()) / n))

    return _make(np.array(x.data.mean(), dtype=x.data.dtype), (x,), vjp)


def mean_rows(x: Tensor) -> Tensor:
    """Mean over rows: [m, n] -> [n]."""
    if x.data.ndim != 2 or x.shape[0] == 0:
        raise ShapeError(f"mean_rows: bad shape {list(x.shape)}")
    m = x.shape[0]

    def vjp(g):
        x.accumulate_grad(np.repeat(g[None, :] / m, m, axis=0))

    return _make(x.data.mean(axis=0), (x,), vjp)


def _softmax_rows_vjp(y: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Softmax backward: dx = y * (g - sum(g*y, row))."""
    dot = (g * y).sum(axis=1, keepdims=True)
    return y * (g - dot)


def softmax_rows(x: Tensor) -> Tensor:
    """Row-wise softmax with max-subtraction for overflow safety."""
    if x.data.ndim != 2:
        raise ShapeError("softmax_rows: rank 2 only")
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=1, keepdims=True)

    def vjp(g):
        x.accumulate_grad(_softmax_rows_vjp(y, g))

    return _make(y, (x,), vjp)


def sqrt(x: Tensor) -> Tensor:
    if np.any(x.data < 0):
        raise NonFiniteError("sqrt of negative value")
    y = np.sqrt(x.data)

    def vjp(g):
        x.accumulate_grad(g / (2.0 * y))

    return _make(y, (x,), vjp)


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)

    def vjp(g):
        x.accumulate_grad(g * (1.0 - y * y))

    return _make(y, (x,), vjp)


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    parts = list(parts)
    if not parts:
        raise ShapeError("concat_rows: no parts")
    width = parts[0].shape[1] if parts[0].data.ndim == 2 else None
    for p in parts:
        if p.data.ndim != 2 or p.shape[1] != width:
            raise ShapeError("concat_rows: all parts must be rank 2 with equal width")
    sizes = [p.shape[0] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                p.accumulate_grad(g[lo:hi])

    return _make(np.concatenate([p.data for p in parts], axis=0), parts, vjp)


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    parts = list(parts)
    if not parts:
        raise ShapeError("concat_cols: no parts")
    rows = parts[0].shape[0] if parts[0].data.ndim == 2 else None
    for p in parts:
        if p.data.ndim != 2 or p.shape[0] != rows:
            raise ShapeError("concat_cols: all parts must be rank 2 with equal row count")
    sizes = [p.shape[1] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                p.accumulate_grad(g[:, lo:hi])

    return _make(np.concatenate([p.data for p in parts], axis=1), parts, vjp)


def slice_rows(x: Tensor, start: int, stop: int) -> Tensor:
    if x.data.ndim < 1 or not (0 <= start <= stop <= x.shape[0]):
        raise ShapeError(f"slice_rows: [{start}:{stop}] of shape {list(x.shape)}")

    def vjp(g):
        gx = np.zeros_like(x.data)
        gx[start:stop] = g
        x.accumulate_grad(gx)

    return _make(x.data[start:stop], (x,), vjp)


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    if x.data.ndim != 2 or not (0 <= start <= stop <= x.shape[1]):
        raise ShapeError(f"slice_cols: [{start}:{stop}] of shape {list(x.shape)}")

    def vjp(g):
        gx = np.zeros_like(x.data)
        gx[:, start:stop] = g
        x.accumulate_grad(gx)

    return _make(x.data[:, start:stop], (x,), vjp)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    if int(np.prod(shape, dtype=np.int64)) != x.data.size:
        raise ShapeError(f"reshape: {list(x.shape)} -> {list(shape)}")

    def vjp(g):
        x.accumulate_grad(g.reshape(x.shape))

    return _make(x.data.reshape(shape), (x,), vjp)


def rms_norm(x: Tensor, gain: Tensor, eps: float = 1e-6) -> Tensor:
    """Per-row RMS normalization with a learnable channel gain.

    y[i, j] = gain[j] * x[i, j] / sqrt(mean_j(x[i, j]^2) + eps)
    """
    if x.data.ndim != 2 or gain.data.ndim != 1 or x.shape[1] != gain.shape[0]:
        raise ShapeError(f"rms_norm: {list(x.shape)} with gain {list(gain.shape)}")
    n = x.shape[1]
    r = np.sqrt((x.data * x.data).mean(axis=1, keepdims=True) + eps)
    xn = x.data / r
    y = xn * gain.data[None, :]

    def vjp(g):
        if x.requires_grad:
            gg = g * gain.data[None, :]
            inner = (gg * x.data).sum(axis=1, keepdims=True)
            x.accumulate_grad(gg / r - x.data * inner / (n * r**3))
        if gain.requires_grad:
            gain.accumulate_grad((g * xn).sum(axis=0))

    return _make(y, (x, gain), vjp)


def conv3x3_same(x: Tensor, kernel: np.ndarray, frames: int, grid_h: int, grid_w: int) -> Tensor:
    """Fixed-weight 3x3 convolution over a per-frame spatial grid.

    ``x`` is [frames * grid_h * grid_w, c_in] with rows laid out
    frame-major, row-major within the frame; ``kernel`` is a plain
    [3, 3, c_in, c_out] array (not trainable), zero padding, no bias.
    """
    if kernel.ndim != 4 or kernel.shape[:2] != (3, 3):
        raise ShapeError(f"conv3x3_same: kernel shape {list(kernel.shape)}")
    c_in, c_out = kernel.shape[2], kernel.shape[3]
    if x.data.ndim != 2 or x.shape != (frames * grid_h * grid_w, c_in):
        raise ShapeError(
            f"conv3x3_same: tokens {list(x.shape)} vs grid "
            f"[{frames}*{grid_h}*{grid_w}, {c_in}]"
        )
    grid = x.data.reshape(frames, grid_h, grid_w, c_in)
    padded = np.pad(grid, ((0, 0), (1, 1), (1, 1), (0, 0)))
    out = np.zeros((frames, grid_h, grid_w, c_out), dtype=x.data.dtype)
    for di in range(3):
        for dj in range(3):
            window = padded[:, di : di + grid_h, dj : dj + grid_w, :]
            out += window @ kernel[di, dj].astype(x.data.dtype)

    def vjp(g):
        gg = g.reshape(frames, grid_h, grid_w, c_out)
        gpad = np.zeros_like(padded)
        for di in range(3):
            for dj in range(3):
                gpad[:, di : di + grid_h, dj : dj + grid_w, :] += (
                    gg @ kernel[di, dj].astype(x.data.dtype).T
                )
        x.accumulate_grad(gpad[:, 1 : 1 + grid_h, 1 : 1 + grid_w, :].reshape(x.shape))

    return _make(out.reshape(frames * grid_h * grid_w, c_out), (x,), vjp)


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """softmax(q k^T / sqrt(d)) v for rank-2 q [m, d], k [n, d], v [n, dv]."""
    if q.data.ndim != 2 or k.data.ndim != 2 or v.data.ndim != 2:
        raise ShapeError("scaled_dot_attention: rank 2 operands required")
    if q.shape[1] != k.shape[1]:
        raise ShapeError(f"scaled_dot_attention: q width {q.shape[1]} != k width {k.shape[1]}")
    if k.shape[0] != v.shape[0]:
        raise ShapeError(f"scaled_dot_attention: {k.shape[0]} keys vs {v.shape[0]} values")
    scores = _scale(matmul(q, transpose(k)), 1.0 / math.sqrt(q.shape[1]))
    return matmul(softmax_rows(scores), v)
