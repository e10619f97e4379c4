"""Binary checkpoint container for parameters and replay buffers.

Layout (all integers little-endian)::

    8 bytes   magic  b"STARCKPT"
    4 bytes   uint32 format version (1)
    8 bytes   uint64 header length H
    H bytes   UTF-8 JSON header
    ...       tensor payloads, concatenated in header order, each row-major
              little-endian in the dtype the header names

The header is ``{"version": 1, "precision": "float64", "tensors": [{"name",
"shape", "dtype"}, ...], "meta": {...}}``. Parameter tensors are named
``params.<layer>.weight`` / ``params.<layer>.bias`` in layer order; replay
buffer rows are ``buffer.*`` with bookkeeping (capacity, seen count, RNG state)
under ``meta["buffer"]``.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Optional

import numpy as np

from .netcore import Layer, ParamSet
from .rehearsal import ReplayBuffer

MAGIC = b"STARCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _le(dtype: np.dtype) -> np.dtype:
    return np.dtype(dtype).newbyteorder("<")


def save(path, params: Optional[ParamSet] = None, buffer: Optional[ReplayBuffer] = None,
         meta: Optional[dict] = None) -> None:
    arrays: dict[str, np.ndarray] = {}
    if params is not None:
        for name, t in params.tensors():
            arrays[f"params.{name}"] = t
    meta = dict(meta or {})
    if buffer is not None:
        arrays.update(buffer.state_arrays())
        meta["buffer"] = buffer.state_meta()
    header = {
        "version": VERSION,
        "precision": "float64",
        "tensors": [{"name": k, "shape": list(v.shape), "dtype": _le(v.dtype).str}
                    for k, v in arrays.items()],
        "meta": meta,
    }
    blob = json.dumps(header).encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(blob)))
        fh.write(blob)
        for v in arrays.values():
            fh.write(np.ascontiguousarray(v, dtype=_le(v.dtype)).tobytes())


def load_raw(path) -> tuple[dict, dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise CheckpointError(f"{path}: bad magic at offset 0")
    if len(data) < 20:
        raise CheckpointError(f"{path}: truncated preamble")
    version, hlen = struct.unpack_from("<IQ", data, 8)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    offset = 20 + hlen
    if len(data) < offset:
        raise CheckpointError(f"{path}: truncated header")
    header = json.loads(data[20:offset].decode())
    arrays = {}
    for spec in header["tensors"]:
        dtype = np.dtype(spec["dtype"])
        count = int(np.prod(spec["shape"], dtype=np.int64))
        nbytes = count * dtype.itemsize
        if len(data) < offset + nbytes:
            raise CheckpointError(f"{path}: tensor {spec['name']!r} truncated at offset {offset}")
        arr = np.frombuffer(data, dtype=dtype, count=count, offset=offset).reshape(spec["shape"])
        arrays[spec["name"]] = arr.astype(dtype.newbyteorder("="))
        offset += nbytes
    return header, arrays


def params_from_arrays(arrays: dict[str, np.ndarray]) -> ParamSet:
    names = []
    for key in arrays:
        if key.startswith("params.") and key.endswith(".weight"):
            names.append(key[len("params."):-len(".weight")])
    if not names:
        raise CheckpointError("checkpoint holds no parameters")
    return ParamSet(tuple(
        Layer(n, arrays[f"params.{n}.weight"], arrays[f"params.{n}.bias"]) for n in names
    ))


def load(path) -> tuple[Optional[ParamSet], Optional[ReplayBuffer], dict]:
    header, arrays = load_raw(path)
    meta = header["meta"]
    params = params_from_arrays(arrays) if any(k.startswith("params.") for k in arrays) else None
    buffer = None
    if "buffer" in meta:
        buffer = ReplayBuffer.from_state(meta["buffer"], arrays)
    return params, buffer, meta
