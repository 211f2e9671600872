"""Checkpoint files: one JSON header line, then little-endian float64 payload.

The header lists every array (name, shape) in payload order together with
free-form metadata; arrays are concatenated in that order with no padding.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1
MAGIC = "ethfraud-ckpt"


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    names = list(arrays)
    header = {
        "magic": MAGIC,
        "format_version": FORMAT_VERSION,
        "arrays": [{"name": n, "shape": list(np.shape(arrays[n]))} for n in names],
        "meta": meta or {},
    }
    line = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(line + b"\n")
        for n in names:
            fh.write(np.ascontiguousarray(arrays[n], dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    raw = Path(path).read_bytes()
    cut = raw.find(b"\n")
    if cut < 0:
        raise CheckpointError(f"{path}: missing header line")
    try:
        header = json.loads(raw[:cut])
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: bad header: {exc}") from exc
    if header.get("magic") != MAGIC or header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint format")
    payload = np.frombuffer(raw, dtype="<f8", offset=cut + 1)
    arrays, offset = {}, 0
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        if offset + count > payload.size:
            raise CheckpointError(f"{path}: payload truncated at {entry['name']}")
        arrays[entry["name"]] = payload[offset:offset + count].reshape(shape).astype(np.float64)
        offset += count
    if offset != payload.size:
        raise CheckpointError(f"{path}: {payload.size - offset} trailing values")
    return arrays, header["meta"]
