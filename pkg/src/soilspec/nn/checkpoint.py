"""Checkpoint container.

Layout::

    8 bytes   magic  b"SSPCKPT1"
    8 bytes   manifest length N, unsigned little-endian
    N bytes   manifest, UTF-8 JSON (sorted keys)
    ...       tensor data: raw little-endian IEEE-754, in manifest order

The manifest carries the layer list (enough to rebuild the model), the
seed, the optimizer step, one entry per tensor (name, shape, offset and
byte length within the data section) and a free-form ``meta`` object.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .model import Model

MAGIC = b"SSPCKPT1"


class CheckpointError(ValueError):
    pass


def _le(dtype: np.dtype) -> np.dtype:
    return np.dtype(dtype).newbyteorder("<")


def checkpoint_bytes(model: Model, step: int = 0, meta: dict | None = None) -> bytes:
    dt = _le(model.dtype)
    tensors, offset = [], 0
    for group, infos in (("param", model.params), ("buffer", model.buffers)):
        for info in infos:
            nbytes = info.size * dt.itemsize
            tensors.append({"name": info.name, "group": group, "shape": list(info.shape),
                            "offset": offset, "nbytes": nbytes})
            offset += nbytes
    manifest = {
        "format": "soilspec-checkpoint",
        "version": 1,
        "dtype": dt.str,
        "seed": model.seed,
        "step": int(step),
        "model": model.describe(),
        "tensors": tensors,
        "meta": meta or {},
    }
    head = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    data = model.theta.astype(dt, copy=False).tobytes() + model.state.astype(dt, copy=False).tobytes()
    return MAGIC + struct.pack("<Q", len(head)) + head + data


def save_checkpoint(model: Model, path: str | Path, step: int = 0, meta: dict | None = None) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(checkpoint_bytes(model, step, meta))
    tmp.replace(path)


def parse_checkpoint(blob: bytes) -> tuple[Model, dict]:
    if blob[:8] != MAGIC:
        raise CheckpointError("not a soilspec checkpoint (bad magic)")
    (n,) = struct.unpack("<Q", blob[8:16])
    manifest = json.loads(blob[16:16 + n].decode("utf-8"))
    dt = np.dtype(manifest["dtype"])
    model = Model.from_description(manifest["model"], dtype=dt.newbyteorder("="))
    data = memoryview(blob)[16 + n:]
    expected = (model.theta.size + model.state.size) * dt.itemsize
    if len(data) != expected:
        raise CheckpointError(f"tensor section has {len(data)} bytes, manifest implies {expected}")
    flat = np.frombuffer(data, dtype=dt)
    model.theta[...] = flat[:model.theta.size]
    model.state[...] = flat[model.theta.size:]
    return model, manifest


def load_checkpoint(path: str | Path) -> tuple[Model, dict]:
    """Returns ``(model, manifest)``."""
    return parse_checkpoint(Path(path).read_bytes())
