"""Versioned binary checkpoints with an integrity checksum.

Layout (little-endian):
    magic          8 bytes  b"CHNKWCK1"
    version        u32
    config JSON    u32 length + UTF-8 payload (pipeline config + trainable mask)
    param count    u32
    per parameter  u16 name length + name, u8 ndim, ndim * u32 dims,
                   raw 32-bit float values (row-major)
    trailer        SHA-256 of every preceding byte

Parameters are stored single-precision; loading a checkpoint always
yields a float32 model, so save -> load -> predict is bit-exact for
float32 states (the training/inference default).
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .pipeline import ModelState, PipelineConfig

MAGIC = b"CHNKWCK1"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(state: ModelState, path) -> None:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    cfg = asdict(state.config)
    cfg["dtype"] = "float32"  # storage precision; see module docstring
    header = json.dumps({"config": cfg, "trainable": list(state.trainable)},
                        sort_keys=True).encode("utf-8")
    buf.write(struct.pack("<I", len(header)))
    buf.write(header)
    names = sorted(state.params)
    buf.write(struct.pack("<I", len(names)))
    for name in names:
        data = np.ascontiguousarray(state.params[name].data, dtype=np.float32)
        encoded = name.encode("utf-8")
        buf.write(struct.pack("<H", len(encoded)))
        buf.write(encoded)
        buf.write(struct.pack("<B", data.ndim))
        for d in data.shape:
            buf.write(struct.pack("<I", d))
        buf.write(data.tobytes())
    payload = buf.getvalue()
    digest = hashlib.sha256(payload).digest()
    Path(path).write_bytes(payload + digest)


def load_checkpoint(path) -> ModelState:
    """Restore a model bit-exactly; reject corrupt or mismatched files."""
    raw = Path(path).read_bytes()
    if len(raw) < len(MAGIC) + 4 + 32:
        raise CheckpointError(f"{path}: truncated checkpoint")
    payload, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(payload).digest() != digest:
        raise CheckpointError(f"{path}: checksum mismatch (corrupt or truncated)")
    view = io.BytesIO(payload)
    if view.read(len(MAGIC)) != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    (version,) = struct.unpack("<I", view.read(4))
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    (hlen,) = struct.unpack("<I", view.read(4))
    header = json.loads(view.read(hlen).decode("utf-8"))
    config = PipelineConfig(**header["config"])
    (count,) = struct.unpack("<I", view.read(4))
    params: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", view.read(2))
        name = view.read(nlen).decode("utf-8")
        (ndim,) = struct.unpack("<B", view.read(1))
        shape = struct.unpack("<" + "I" * ndim, view.read(4 * ndim))
        nbytes = 4 * int(np.prod(shape)) if ndim else 4
        data = np.frombuffer(view.read(nbytes), dtype="<f4").reshape(shape)
        params[name] = data.copy()
    return _rebuild(config, tuple(header["trainable"]), params, str(path))


def _rebuild(config: PipelineConfig, trainable: tuple[str, ...],
             params: dict[str, np.ndarray], origin: str) -> ModelState:
    from .pipeline import init_model

    state = init_model(config, trainable=trainable)
    expected = {name: p.shape for name, p in state.params.items()}
    if set(expected) != set(params):
        missing = sorted(set(expected) - set(params))
        extra = sorted(set(params) - set(expected))
        raise CheckpointError(
            f"{origin}: parameter set does not match config "
            f"(missing={missing[:3]}, unexpected={extra[:3]})")
    for name, arr in params.items():
        if arr.shape != expected[name]:
            raise CheckpointError(
                f"{origin}: shape mismatch for {name}: checkpoint {arr.shape} "
                f"vs config {expected[name]}")
        state.params[name].data = arr
    state.apply_trainable()
    return state
