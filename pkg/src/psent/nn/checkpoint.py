"""Binary checkpoint format.

Layout (little-endian)::

    b"SERN" | u16 version | u32 descriptor length | UTF-8 JSON descriptor
    then per tensor: u32 name length | name | u32 rank | u32 dims... | f32 data
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .model import ArchConfig, SEResNet

MAGIC = b"SERN"
VERSION = 1
BUFFER_SUFFIXES = (".mean", ".var")


class CheckpointError(ValueError):
    pass


def save_checkpoint(model: SEResNet, path, extra: dict | None = None) -> None:
    descriptor = {"arch": model.config.to_dict(), **(extra or {})}
    blob = json.dumps(descriptor, sort_keys=True).encode("utf-8")
    tensors = {**model.params, **model.buffers}
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<HI", VERSION, len(blob)) + blob)
        for name in sorted(tensors):
            arr = np.ascontiguousarray(tensors[name], dtype="<f4")
            key = name.encode("utf-8")
            fh.write(struct.pack("<I", len(key)) + key)
            fh.write(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
            fh.write(arr.tobytes())


def read_checkpoint(path):
    """Return ``(descriptor, {name: float32 array})``."""
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"missing checkpoint: {path}")
    data = path.read_bytes()
    if data[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {data[:4]!r}")
    version, dlen = struct.unpack_from("<HI", data, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    pos = 10
    descriptor = json.loads(data[pos:pos + dlen].decode("utf-8"))
    pos += dlen
    tensors = {}
    try:
        while pos < len(data):
            (nlen,) = struct.unpack_from("<I", data, pos)
            pos += 4
            name = data[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<I", data, pos)
            pos += 4
            dims = struct.unpack_from(f"<{rank}I", data, pos)
            pos += 4 * rank
            count = int(np.prod(dims)) if rank else 1
            arr = np.frombuffer(data, dtype="<f4", count=count, offset=pos).reshape(dims)
            pos += 4 * count
            tensors[name] = arr.astype(np.float32)
    except (struct.error, ValueError) as exc:
        raise CheckpointError(f"{path}: truncated or corrupt tensor table ({exc})") from None
    return descriptor, tensors


def _split(tensors):
    params = {k: v for k, v in tensors.items() if not k.endswith(BUFFER_SUFFIXES)}
    buffers = {k: v for k, v in tensors.items() if k.endswith(BUFFER_SUFFIXES)}
    return params, buffers


def load_checkpoint(path) -> SEResNet:
    """Restore a model exactly as saved."""
    descriptor, tensors = read_checkpoint(path)
    model = SEResNet(ArchConfig.from_dict(descriptor["arch"]), dtype=np.float32)
    params, buffers = _split(tensors)
    expected = set(model.params) | set(model.buffers)
    if set(tensors) != expected:
        raise CheckpointError(f"{path}: tensor names do not match the architecture descriptor")
    for name, arr in tensors.items():
        ref = model.params.get(name, model.buffers.get(name))
        if ref.shape != arr.shape:
            raise CheckpointError(f"{path}: {name} has shape {arr.shape}, expected {ref.shape}")
    model.load_state(params, buffers)
    return model


def init_from_checkpoint(path, config: ArchConfig | None = None, reinit=(), seed: int = 0) -> SEResNet:
    """Transfer-learning initialisation.

    Builds a fresh model for ``config`` (default: the checkpoint's own) and
    copies every checkpoint tensor except those listed in ``reinit``, which
    keep their fresh initialisation. A shape mismatch on any other tensor is
    an error; e.g. a different input channel count requires
    ``reinit=("stem.conv.w",)``.
    """
    descriptor, tensors = read_checkpoint(path)
    source = ArchConfig.from_dict(descriptor["arch"])
    config = config or source
    model = SEResNet(config, seed=seed, dtype=np.float32)
    reinit = set(reinit)
    unknown = reinit - set(model.params) - set(model.buffers)
    if unknown:
        raise CheckpointError(f"cannot re-initialise unknown tensors: {sorted(unknown)}")
    for store in (model.params, model.buffers):
        for name in store:
            if name in reinit:
                continue
            if name not in tensors:
                raise CheckpointError(f"checkpoint lacks tensor {name}")
            if tensors[name].shape != store[name].shape:
                raise CheckpointError(
                    f"{name}: checkpoint shape {tensors[name].shape} incompatible with "
                    f"{store[name].shape}; declare it in reinit to adapt"
                )
            store[name] = tensors[name].copy()
    return model
