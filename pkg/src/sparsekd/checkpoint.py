"""Binary checkpoint format.

Layout, all little-endian:

    magic   5 bytes  b"SPDB1"
    version u32
    hlen    u64      byte length of the JSON header
    header  hlen bytes, UTF-8 JSON:
              {"config": {...encoder config...},
               "tensors": [{"name", "dtype", "shape", "offset", "nbytes"}...]}
    payload raw tensor bytes at the stated offsets (relative to payload start)

Tensor names are unique and sorted; offsets are packed in index order with
no gaps or overlaps, which makes serialization canonical: save -> load ->
save reproduces the file byte for byte.  dtypes are ``f64`` (default),
``f32`` (opt-in down-conversion of parameters), and ``bitmask`` (row-major
bit-packed pruning masks).
"""

from __future__ import annotations

import dataclasses
import json
import struct

import numpy as np

from .encoder import EncoderConfig, EncoderParams, init_params
from .errors import CheckpointError, CheckpointVersionError
from .pruning import PruneMask

MAGIC = b"SPDB1"
VERSION = 1

_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}


def _config_dict(cfg: EncoderConfig) -> dict:
    return dataclasses.asdict(cfg)


def save_checkpoint(path, params: EncoderParams, mask: PruneMask | None = None,
                    f32: bool = False) -> None:
    """Write params (and optionally a mask) to ``path``.

    ``f32`` down-converts floating tensors on save; masks are always
    bit-packed.  Without ``f32`` the round trip is bitwise.
    """
    entries = []
    blobs = []
    named = {f"param.{k}": v.data for k, v in params.named().items()}
    tensors: dict[str, tuple[str, np.ndarray]] = {}
    for name, arr in named.items():
        dtype = "f32" if f32 else "f64"
        tensors[name] = (dtype, arr)
    if mask is not None:
        for k, m in mask.masks.items():
            tensors[f"mask.{k}"] = ("bitmask", m)
    offset = 0
    for name in sorted(tensors):
        dtype, arr = tensors[name]
        if dtype == "bitmask":
            raw = np.packbits(arr.astype(np.uint8).reshape(-1)).tobytes()
        else:
            raw = np.ascontiguousarray(arr, dtype=_DTYPES[dtype]).tobytes()
        entries.append({
            "name": name,
            "dtype": dtype,
            "shape": list(arr.shape),
            "offset": offset,
            "nbytes": len(raw),
        })
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps(
        {"config": _config_dict(params.config), "tensors": entries},
        sort_keys=True, separators=(",", ":"),
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for raw in blobs:
            fh.write(raw)


def _read_exact(fh, n, what):
    data = fh.read(n)
    if len(data) != n:
        raise CheckpointError(f"truncated checkpoint: expected {n} bytes for {what}, "
                              f"got {len(data)} at offset {fh.tell() - len(data)}")
    return data


def load_checkpoint(path) -> tuple[EncoderParams, PruneMask | None]:
    """Read a checkpoint; returns (params, mask-or-None)."""
    with open(path, "rb") as fh:
        magic = _read_exact(fh, len(MAGIC), "magic")
        if magic != MAGIC:
            raise CheckpointError(f"bad magic {magic!r} at offset 0, expected {MAGIC!r}")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != VERSION:
            raise CheckpointVersionError(
                f"unsupported checkpoint version {version}, expected {VERSION}"
            )
        (hlen,) = struct.unpack("<Q", _read_exact(fh, 8, "header length"))
        try:
            header = json.loads(_read_exact(fh, hlen, "header"))
        except json.JSONDecodeError as exc:
            raise CheckpointError(f"corrupt header JSON: {exc}") from exc
        payload = fh.read()
    entries = header.get("tensors")
    if not isinstance(entries, list):
        raise CheckpointError("header missing tensor index")
    names = [e["name"] for e in entries]
    if names != sorted(names) or len(set(names)) != len(names):
        raise CheckpointError("tensor index must be unique and sorted by name")
    expected = 0
    for e in entries:
        if e["offset"] != expected:
            raise CheckpointError(
                f"tensor {e['name']}: offset {e['offset']} overlaps or leaves a gap "
                f"(expected {expected})"
            )
        expected = e["offset"] + e["nbytes"]
    if expected != len(payload):
        raise CheckpointError(
            f"payload length {len(payload)} does not match index end {expected}"
        )
    arrays = {}
    for e in entries:
        raw = payload[e["offset"]:e["offset"] + e["nbytes"]]
        shape = tuple(e["shape"])
        size = int(np.prod(shape)) if shape else 1
        if e["dtype"] == "bitmask":
            bits = np.unpackbits(np.frombuffer(raw, dtype=np.uint8), count=size)
            arrays[e["name"]] = bits.reshape(shape).astype(np.float64)
        elif e["dtype"] in _DTYPES:
            arr = np.frombuffer(raw, dtype=_DTYPES[e["dtype"]])
            if arr.size != size:
                raise CheckpointError(
                    f"tensor {e['name']}: payload holds {arr.size} values, "
                    f"shape needs {size} at offset {e['offset']}"
                )
            arrays[e["name"]] = arr.reshape(shape).astype(np.float64)
        else:
            raise CheckpointError(f"tensor {e['name']}: unknown dtype {e['dtype']!r}")
    config = EncoderConfig(**header["config"])
    params = init_params(config, seed=0)
    for name, tensor in params.named().items():
        key = f"param.{name}"
        if key not in arrays:
            raise CheckpointError(f"checkpoint missing tensor {key}")
        if arrays[key].shape != tensor.data.shape:
            raise CheckpointError(
                f"tensor {key}: shape {arrays[key].shape} does not match "
                f"config-implied {tensor.data.shape}"
            )
        tensor.data = np.ascontiguousarray(arrays[key])
    mask_arrays = {k[len("mask."):]: v for k, v in arrays.items() if k.startswith("mask.")}
    mask = PruneMask(mask_arrays) if mask_arrays else None
    return params, mask
