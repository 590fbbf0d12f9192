"""Binary checkpoints: a JSON header followed by packed little-endian arrays.

Layout::

    magic  b"LFCK"          4 bytes
    version                 u16 little-endian
    header length           u64 little-endian
    header                  UTF-8 JSON, keys sorted, no whitespace
    payload                 arrays in manifest order, '<f8' or '<i8'

The header's ``manifest`` lists ``[name, dtype, shape]`` per array in the
order they were written (network layers in forward order). Loading and
saving again reproduces the file byte for byte.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Dict, Tuple

import numpy as np

MAGIC = b"LFCK"
VERSION = 1
_HEAD = struct.Struct("<4sHQ")
_DTYPES = {"f8": "<f8", "i8": "<i8", "b1": "|b1"}


class CheckpointError(ValueError):
    pass


def _code(a: np.ndarray) -> str:
    if a.dtype.kind == "f":
        return "f8"
    if a.dtype.kind in "iu":
        return "i8"
    if a.dtype.kind == "b":
        return "b1"
    raise CheckpointError(f"unsupported array dtype {a.dtype}")


def dumps(meta: dict, arrays: Dict[str, np.ndarray]) -> bytes:
    manifest = []
    chunks = []
    for name, a in arrays.items():
        a = np.asarray(a)
        code = _code(a)
        manifest.append([name, code, list(a.shape)])
        chunks.append(np.ascontiguousarray(a, dtype=_DTYPES[code]).tobytes())
    header = json.dumps({"meta": meta, "manifest": manifest}, sort_keys=True, separators=(",", ":"),
                        allow_nan=True).encode()
    return _HEAD.pack(MAGIC, VERSION, len(header)) + header + b"".join(chunks)


def loads(raw: bytes, source: str = "<bytes>") -> Tuple[dict, Dict[str, np.ndarray]]:
    if len(raw) < _HEAD.size:
        raise CheckpointError(f"{source}: truncated checkpoint")
    magic, version, hlen = _HEAD.unpack_from(raw)
    if magic != MAGIC:
        raise CheckpointError(f"{source}: not a checkpoint file")
    if version != VERSION:
        raise CheckpointError(f"{source}: checkpoint format version {version}, this build reads {VERSION}")
    try:
        header = json.loads(raw[_HEAD.size:_HEAD.size + hlen])
    except ValueError as exc:
        raise CheckpointError(f"{source}: corrupt header ({exc})") from None
    off = _HEAD.size + hlen
    arrays: Dict[str, np.ndarray] = {}
    for name, code, shape in header["manifest"]:
        dt = np.dtype(_DTYPES[code])
        n = int(np.prod(shape)) if shape else 1
        end = off + n * dt.itemsize
        if end > len(raw):
            raise CheckpointError(f"{source}: truncated payload at {name}")
        arrays[name] = np.frombuffer(raw, dtype=dt, count=n, offset=off).reshape(shape).copy()
        off = end
    if off != len(raw):
        raise CheckpointError(f"{source}: trailing bytes after payload")
    return header["meta"], arrays


def save(path, meta: dict, arrays: Dict[str, np.ndarray]) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(dumps(meta, arrays))
    tmp.replace(path)


def load(path) -> Tuple[dict, Dict[str, np.ndarray]]:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc.strerror}") from None
    return loads(raw, str(path))


def pack_params(prefix: str, params: Dict[str, np.ndarray], out: Dict[str, np.ndarray]) -> None:
    for k, v in params.items():
        out[f"{prefix}/{k}"] = v


def unpack_params(prefix: str, arrays: Dict[str, np.ndarray]) -> Dict[str, np.ndarray]:
    p = prefix + "/"
    return {k[len(p):]: v for k, v in arrays.items() if k.startswith(p)}
