"""Tensor files and hashed tensor directories.

File layout (little-endian throughout, no padding):

    magic   4 bytes  b"MOCA"
    version u8       1
    dtype   u8       0 = float32, 1 = float64
    rank    u16
    dims    rank * u64
    payload row-major raw values

Round trips are bit-exact for both dtypes.  A directory of named tensors
gets a ``manifest.json`` with per-file sha256 hashes; loading verifies them.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from .tensor import Tensor

MAGIC = b"MOCA"
VERSION = 1

_CODE_TO_DTYPE = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_KIND_TO_CODE = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


class TensorFormatError(ValueError):
    """Malformed, truncated, or out-of-range tensor file."""


def _as_array(t) -> np.ndarray:
    return t.data if isinstance(t, Tensor) else np.asarray(t)


def save_tensor(path, t) -> None:
    arr = _as_array(t)
    native = np.dtype(arr.dtype.kind + str(arr.dtype.itemsize))
    if native not in _KIND_TO_CODE:
        raise TensorFormatError(f"unsupported dtype {arr.dtype}")
    if arr.ndim > 0xFFFF:
        raise TensorFormatError(f"rank {arr.ndim} exceeds format limit")
    for d in arr.shape:
        if d >= 2**64:
            raise TensorFormatError("dimension exceeds u64")
    code = _KIND_TO_CODE[native]
    header = struct.pack("<4sBBH", MAGIC, VERSION, code, arr.ndim)
    dims = struct.pack(f"<{arr.ndim}Q", *arr.shape)
    payload = np.ascontiguousarray(arr).astype(_CODE_TO_DTYPE[code], copy=False).tobytes()
    Path(path).write_bytes(header + dims + payload)


def load_tensor(path) -> Tensor:
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise TensorFormatError(f"{path}: truncated header")
    magic, version, code, rank = struct.unpack_from("<4sBBH", raw, 0)
    if magic != MAGIC:
        raise TensorFormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise TensorFormatError(f"{path}: unsupported version {version}")
    if code not in _CODE_TO_DTYPE:
        raise TensorFormatError(f"{path}: unknown dtype code {code}")
    offset = 8
    if len(raw) < offset + 8 * rank:
        raise TensorFormatError(f"{path}: truncated dims")
    dims = struct.unpack_from(f"<{rank}Q", raw, offset)
    offset += 8 * rank
    dtype = _CODE_TO_DTYPE[code]
    count = int(np.prod(dims, dtype=np.uint64)) if rank else 1
    expected = count * dtype.itemsize
    if len(raw) - offset != expected:
        raise TensorFormatError(
            f"{path}: payload is {len(raw) - offset} bytes, expected {expected}"
        )
    arr = np.frombuffer(raw, dtype=dtype, count=count, offset=offset).reshape(dims)
    out = Tensor.__new__(Tensor)
    data = arr.astype(arr.dtype.newbyteorder("="), copy=True)
    data.setflags(write=False)
    out.data = data
    out.grad = None
    out.requires_grad = False
    out.name = ""
    out._parents = ()
    out._vjp = None
    return out


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def save_named_tensors(directory, tensors: Mapping[str, object], extra: dict | None = None) -> None:
    """Write one file per tensor plus a manifest with content hashes."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = {}
    for name, t in tensors.items():
        fname = name.replace(".", "__") + ".tensor"
        save_tensor(directory / fname, t)
        entries[name] = {"file": fname, "sha256": sha256_file(directory / fname)}
    manifest = {"format_version": VERSION, "tensors": entries}
    if extra:
        manifest.update(extra)
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def load_named_tensors(directory) -> tuple[dict[str, Tensor], dict]:
    """Load a tensor directory, verifying every hash in the manifest."""
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    out = {}
    for name, entry in manifest["tensors"].items():
        path = directory / entry["file"]
        digest = sha256_file(path)
        if digest != entry["sha256"]:
            raise TensorFormatError(f"{path}: hash mismatch (expected {entry['sha256']})")
        out[name] = load_tensor(path)
    return out, manifest
