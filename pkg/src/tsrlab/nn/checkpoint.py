"""Parameter checkpoints.

Layout: the line ``TSRLAB-CKPT 1``, a 4-byte little-endian header length, a
UTF-8 JSON header listing ``{name, shape}`` in storage order, then every
tensor as little-endian float32, row-major, back to back.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .model import ModelInstance

MAGIC = b"TSRLAB-CKPT 1\n"


def save_checkpoint(model: ModelInstance, path: str | Path) -> None:
    header = {
        "version": 1,
        "preset": model.spec.preset,
        "seed": model.rng_seed,
        "tensors": [{"name": k, "shape": list(p.shape)} for k, p in model.params.items()],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for p in model.params.values():
            fh.write(np.ascontiguousarray(p.data, dtype="<f4").tobytes())


def read_checkpoint(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    if not raw.startswith(MAGIC):
        raise ValueError(f"{path} is not a tsrlab checkpoint")
    pos = len(MAGIC)
    (n,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    header = json.loads(raw[pos : pos + n].decode("utf-8"))
    pos += n
    tensors = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        tensors[entry["name"]] = np.frombuffer(raw, dtype="<f4", count=count, offset=pos).reshape(shape)
        pos += 4 * count
    if pos != len(raw):
        raise ValueError("trailing bytes in checkpoint")
    return header, tensors


def load_checkpoint(model: ModelInstance, path: str | Path) -> None:
    _, tensors = read_checkpoint(path)
    if set(tensors) != set(model.params):
        raise ValueError("checkpoint parameters do not match the model")
    for name, value in tensors.items():
        p = model.params[name]
        if p.shape != value.shape:
            raise ValueError(f"{name}: shape {value.shape} != {p.shape}")
        p.data = value.astype(model.dtype)
