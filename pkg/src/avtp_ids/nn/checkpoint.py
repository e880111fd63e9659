"""Versioned binary container for models and fitted detectors.

Layout (all integers little-endian)::

    magic       8 bytes   b"AVTPIDS\\x00"
    version     uint32    FORMAT_VERSION
    header_len  uint32    length of the JSON header in bytes
    header      JSON      {"kind", "meta", "arrays": [{"name", "dtype", "shape"}, ...]}
    payload     raw C-order little-endian array bytes, in header order

The array list order is the declared parameter order of the model.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .layers import Sequential
from .optim import AdamState

MAGIC = b"AVTPIDS\x00"
FORMAT_VERSION = 1
_DTYPES = {"float64": "<f8", "float32": "<f4", "int64": "<i8", "int32": "<i4", "uint8": "|u1"}


class CheckpointError(ValueError):
    """Corrupt, truncated or incompatible container file."""


def write_container(path, kind: str, meta: dict, arrays: list[tuple[str, np.ndarray]]) -> int:
    """Write a container; returns the number of bytes written."""
    entries = []
    blobs = []
    for name, arr in arrays:
        arr = np.asarray(arr)
        dtype = arr.dtype.name
        if dtype not in _DTYPES:
            raise TypeError(f"unsupported array dtype {dtype} for {name!r}")
        entries.append({"name": name, "dtype": dtype, "shape": list(arr.shape)})
        blobs.append(np.ascontiguousarray(arr, dtype=_DTYPES[dtype]).tobytes())
    header = json.dumps({"kind": kind, "meta": meta, "arrays": entries}).encode()
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)
    return path.stat().st_size


def read_container(path):
    """Return ``(kind, meta, {name: array})``; arrays keep their stored order."""
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint container")
    version, header_len = struct.unpack_from("<II", data, 8)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    start = 16 + header_len
    if start > len(data):
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(data[16:start])
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: corrupt header") from exc
    arrays = {}
    offset = start
    for entry in header["arrays"]:
        dt = np.dtype(_DTYPES[entry["dtype"]])
        count = int(np.prod(entry["shape"], dtype=np.int64))
        nbytes = count * dt.itemsize
        if offset + nbytes > len(data):
            raise CheckpointError(f"{path}: truncated payload at {entry['name']!r}")
        arr = np.frombuffer(data, dtype=dt, count=count, offset=offset)
        arrays[entry["name"]] = arr.reshape(entry["shape"]).astype(entry["dtype"])
        offset += nbytes
    if offset != len(data):
        raise CheckpointError(f"{path}: {len(data) - offset} trailing bytes")
    return header["kind"], header["meta"], arrays


def save_model(model: Sequential, path, meta: dict | None = None,
               adam: AdamState | None = None, dtype: str = "float64") -> int:
    """Store layer specs and parameters (optionally Adam moments).

    ``dtype="float32"`` halves the file at the cost of an exact round trip.
    """
    arrays = [(name, p.value.astype(dtype)) for name, p in model.named_parameters()]
    full_meta = {"layers": model.spec(), "user": meta or {}}
    if adam is not None:
        full_meta["adam"] = {"lr": adam.lr, "beta1": adam.beta1, "beta2": adam.beta2,
                             "eps": adam.eps, "t": adam.t}
        for name, p in model.named_parameters():
            m, v = adam.moments(p)
            arrays.append((f"adam.m.{name}", m.astype(dtype)))
            arrays.append((f"adam.v.{name}", v.astype(dtype)))
    return write_container(path, "model", full_meta, arrays)


def load_model(path, with_adam: bool = False):
    """Inverse of :func:`save_model`. Returns the model and its user metadata
    (and an :class:`AdamState` when ``with_adam``)."""
    kind, meta, arrays = read_container(path)
    if kind != "model":
        raise CheckpointError(f"{path}: holds a {kind!r}, not a model")
    model = Sequential.from_spec(meta["layers"])
    for name, p in model.named_parameters():
        if name not in arrays:
            raise CheckpointError(f"{path}: missing parameter {name!r}")
        value = arrays[name]
        if value.shape != p.shape:
            raise CheckpointError(f"{path}: {name!r} has shape {value.shape}, expected {p.shape}")
        p.value[...] = value
    if not with_adam:
        return model, meta["user"]
    adam = None
    if "adam" in meta:
        a = meta["adam"]
        adam = AdamState(lr=a["lr"], beta1=a["beta1"], beta2=a["beta2"], eps=a["eps"], t=a["t"])
        for name, p in model.named_parameters():
            adam.m[p.id] = arrays[f"adam.m.{name}"].astype(np.float64)
            adam.v[p.id] = arrays[f"adam.v.{name}"].astype(np.float64)
    return model, meta["user"], adam
