"""Parameter containers: naming, traversal, and functional updates.

Trainable state lives in plain dataclasses whose fields are Tensors,
nested blocks, or lists of either.  ``named_parameters`` walks a block in
field order and yields stable dotted names; ``map_parameters`` rebuilds the
same structure with every parameter replaced, which is how the optimizer
and the finite-difference harness produce updated copies without mutating
tensors in place.
"""

from __future__ import annotations

import dataclasses
from typing import Callable, Iterator

from .tensor import Tensor


class ParamBlock:
    """Marker base class for dataclasses that hold trainable tensors."""


def named_parameters(block, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
    for field in dataclasses.fields(block):
        value = getattr(block, field.name)
        name = f"{prefix}{field.name}"
        yield from _walk(value, name)


def _walk(value, name: str) -> Iterator[tuple[str, Tensor]]:
    if isinstance(value, Tensor):
        yield name, value
    elif isinstance(value, ParamBlock):
        yield from named_parameters(value, prefix=name + ".")
    elif isinstance(value, (list, tuple)) and value and isinstance(value[0], (Tensor, ParamBlock)):
        for i, item in enumerate(value):
            yield from _walk(item, f"{name}.{i}")


def map_parameters(block, fn: Callable[[str, Tensor], Tensor], prefix: str = ""):
    """Rebuild a block with fn applied to every trainable tensor."""
    updates = {}
    for field in dataclasses.fields(block):
        value = getattr(block, field.name)
        updates[field.name] = _map_value(value, fn, f"{prefix}{field.name}")
    return dataclasses.replace(block, **updates)


def _map_value(value, fn, name: str):
    if isinstance(value, Tensor):
        return fn(name, value)
    if isinstance(value, ParamBlock):
        return map_parameters(value, fn, prefix=name + ".")
    if isinstance(value, (list, tuple)) and value and isinstance(value[0], (Tensor, ParamBlock)):
        mapped = [_map_value(item, fn, f"{name}.{i}") for i, item in enumerate(value)]
        return type(value)(mapped) if isinstance(value, tuple) else mapped
    return value


def replace_parameter(block, target: str, data) -> object:
    """Return a copy of the block with one named parameter's values swapped."""
    found = []

    def swap(name: str, t: Tensor) -> Tensor:
        if name == target:
            found.append(name)
            return Tensor(data, requires_grad=t.requires_grad, name=t.name)
        return t

    out = map_parameters(block, swap)
    if not found:
        raise KeyError(f"no parameter named {target!r}")
    return out


def freeze(block):
    """Copy of the block with gradient tracking disabled on every tensor.

    Used by finite-difference sweeps, where graph recording is wasted work.
    """
    return _freeze_block(block)


def _freeze_value(value):
    if isinstance(value, Tensor):
        return Tensor(value.data, requires_grad=False, name=value.name)
    if isinstance(value, ParamBlock):
        return _freeze_block(value)
    if isinstance(value, (list, tuple)) and value and isinstance(value[0], (Tensor, ParamBlock)):
        items = [_freeze_value(v) for v in value]
        return type(value)(items) if isinstance(value, tuple) else items
    return value


def _freeze_block(block):
    updates = {
        field.name: _freeze_value(getattr(block, field.name))
        for field in dataclasses.fields(block)
    }
    return dataclasses.replace(block, **updates)


def parameter_count(block) -> int:
    return sum(t.data.size for _, t in named_parameters(block))
