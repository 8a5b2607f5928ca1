"""Central finite differences and the analytic-vs-numeric comparison loop."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import params as par
from .tensor import NonFiniteError, Tensor, backward

DEFAULT_STEP = 1e-5
REL_FLOOR = 1e-8


def _scalar(value) -> float:
    out = value.item() if isinstance(value, Tensor) else float(value)
    if not np.isfinite(out):
        raise NonFiniteError("objective returned a non-finite value")
    return out


def finite_diff_grad(f: Callable[[Tensor], object], x: Tensor, h: float = 1e-4) -> np.ndarray:
    """Central differences (f(x+he) - f(x-he)) / 2h, elementwise."""
    base = np.array(x.data, dtype=np.float64)
    grad = np.zeros_like(base)
    flat = grad.reshape(-1)
    bflat = base.reshape(-1)
    for i in range(base.size):
        orig = bflat[i]
        bflat[i] = orig + h
        fp = _scalar(f(Tensor(base)))
        bflat[i] = orig - h
        fm = _scalar(f(Tensor(base)))
        bflat[i] = orig
        flat[i] = (fp - fm) / (2.0 * h)
    return grad


def max_rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = REL_FLOOR) -> float:
    """Max elementwise |a - n| relative to the larger magnitude, floored."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


@dataclass
class GradCheckRow:
    name: str
    max_rel: float
    analytic_norm: float
    numeric_norm: float


def check_parameter_gradients(
    loss_fn: Callable[[object], Tensor],
    block,
    h: float = DEFAULT_STEP,
    names: list[str] | None = None,
) -> list[GradCheckRow]:
    """Compare tape gradients against central differences per parameter.

    ``loss_fn`` must rebuild the loss from a parameter block, so it can be
    called both with the live block (for the analytic pass) and with frozen
    perturbed copies (for the numeric sweep).
    """
    loss = loss_fn(block)
    backward(loss)
    analytic = {}
    for name, t in par.named_parameters(block):
        if t.grad is None:
            raise NonFiniteError(f"parameter {name} received no gradient")
        analytic[name] = np.array(t.grad, dtype=np.float64)

    frozen = par.freeze(block)
    rows = []
    for name, t in par.named_parameters(block):
        if names is not None and name not in names:
            continue
        base = np.array(t.data, dtype=np.float64)
        numeric = np.zeros_like(base)
        nflat = numeric.reshape(-1)
        bflat = base.reshape(-1)
        for i in range(base.size):
            orig = bflat[i]
            bflat[i] = orig + h
            fp = _scalar(loss_fn(par.replace_parameter(frozen, name, base)))
            bflat[i] = orig - h
            fm = _scalar(loss_fn(par.replace_parameter(frozen, name, base)))
            bflat[i] = orig
            nflat[i] = (fp - fm) / (2.0 * h)
        rows.append(
            GradCheckRow(
                name=name,
                max_rel=max_rel_error(analytic[name], numeric),
                analytic_norm=float(np.linalg.norm(analytic[name])),
                numeric_norm=float(np.linalg.norm(numeric)),
            )
        )
    return rows
