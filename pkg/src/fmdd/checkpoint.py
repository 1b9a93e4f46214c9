"""Model checkpoints: a key-value config document plus an ordered parameter
table (name, shape, trainable flag, float32 payload), all little-endian.

Loading reconstructs the model from the stored config (or a caller-supplied
one) and restores every value and trainable flag; name or shape mismatches
are hard errors naming the offending parameter.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .model import DeceptionModel, ModelConfig, build_model

CKPT_MAGIC = b"FMCK0001"


class CheckpointError(ValueError):
    pass


def save_checkpoint(model: DeceptionModel, path) -> None:
    config_doc = model.cfg.to_kv().encode("utf-8")
    params = model.store.all()
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<I", len(config_doc)))
        fh.write(config_doc)
        fh.write(struct.pack("<I", len(params)))
        for p in params:
            name = p.name.encode("utf-8")
            fh.write(struct.pack("<H", len(name)))
            fh.write(name)
            fh.write(struct.pack("<BB", 1 if p.trainable else 0, p.value.ndim))
            fh.write(struct.pack(f"<{p.value.ndim}I", *p.value.shape))
            fh.write(np.ascontiguousarray(p.value.data, dtype="<f4").tobytes())


def _read_exact(blob: bytes, off: int, n: int, what: str) -> tuple[bytes, int]:
    if off + n > len(blob):
        raise CheckpointError(f"checkpoint truncated while reading {what}")
    return blob[off:off + n], off + n


def load_checkpoint(path, config: ModelConfig | None = None) -> DeceptionModel:
    """Rebuild a model from a checkpoint.

    When `config` is given it must structurally match the stored parameters;
    otherwise the stored config document is used.
    """
    blob = Path(path).read_bytes()
    if blob[:len(CKPT_MAGIC)] != CKPT_MAGIC:
        raise CheckpointError(f"{path}: bad checkpoint magic")
    off = len(CKPT_MAGIC)
    raw, off = _read_exact(blob, off, 4, "config length")
    (cfg_len,) = struct.unpack("<I", raw)
    raw, off = _read_exact(blob, off, cfg_len, "config document")
    stored_cfg = ModelConfig.from_kv(raw.decode("utf-8"))
    cfg = config if config is not None else stored_cfg

    model = build_model(cfg, seed=0)
    raw, off = _read_exact(blob, off, 4, "parameter count")
    (n_params,) = struct.unpack("<I", raw)
    seen: set[str] = set()
    for _ in range(n_params):
        raw, off = _read_exact(blob, off, 2, "name length")
        (name_len,) = struct.unpack("<H", raw)
        raw, off = _read_exact(blob, off, name_len, "name")
        name = raw.decode("utf-8")
        raw, off = _read_exact(blob, off, 2, "flags")
        trainable, ndim = raw[0], raw[1]
        raw, off = _read_exact(blob, off, 4 * ndim, "shape")
        shape = struct.unpack(f"<{ndim}I", raw)
        count = int(np.prod(shape)) if shape else 1
        raw, off = _read_exact(blob, off, 4 * count, f"payload of {name}")
        if name not in model.store:
            raise CheckpointError(f"unknown parameter {name!r} for config "
                                  f"preset {cfg.preset!r}")
        p = model.store[name]
        if tuple(shape) != p.value.shape:
            raise CheckpointError(f"shape mismatch for {name!r}: checkpoint has "
                                  f"{tuple(shape)}, model expects {p.value.shape}")
        p.value.data[...] = np.frombuffer(raw, dtype="<f4").reshape(shape)
        p.value.grad = None
        p.trainable = bool(trainable)
        seen.add(name)
    if off != len(blob):
        raise CheckpointError(f"{path}: trailing bytes after parameter table")
    missing = [n for n in model.store.names() if n not in seen]
    if missing:
        raise CheckpointError(f"checkpoint missing parameters: {missing[:3]}"
                              f"{'...' if len(missing) > 3 else ''}")
    return model
