"""Versioned binary parameter checkpoints.

Layout (little-endian): magic "AUGM" | u32 format version | u32 config
JSON length | config JSON | parameter blobs as float32 in declaration
order. Blob sizes derive from the config, so loading validates the byte
count exactly.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .config import ModelConfig
from .layers import ModelError
from .network import AuForecaster

MAGIC = b"AUGM"
FORMAT_VERSION = 1


class CheckpointError(ModelError):
    """Unreadable or inconsistent checkpoint file."""


def save_checkpoint(model: AuForecaster, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    config_json = json.dumps(model.cfg.to_dict()).encode()
    with path.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(config_json)))
        fh.write(config_json)
        for p in model.parameters():
            fh.write(np.ascontiguousarray(p.value, dtype="<f4").tobytes())
    return path


def load_checkpoint(path: str | Path) -> AuForecaster:
    path = Path(path)
    blob = path.read_bytes()
    if blob[:4] != MAGIC:
        raise CheckpointError(f"{path} is not a parameter checkpoint (bad magic)")
    version, cfg_len = struct.unpack_from("<II", blob, 4)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    try:
        cfg = ModelConfig.from_dict(json.loads(blob[12:12 + cfg_len].decode()))
    except (ValueError, TypeError) as exc:
        raise CheckpointError(f"bad embedded config: {exc}") from exc
    model = AuForecaster(cfg)
    offset = 12 + cfg_len
    for p in model.parameters():
        nbytes = p.value.size * 4
        if offset + nbytes > len(blob):
            raise CheckpointError("checkpoint truncated")
        flat = np.frombuffer(blob, dtype="<f4", count=p.value.size, offset=offset)
        p.value[...] = flat.reshape(p.value.shape).astype(cfg.np_dtype)
        offset += nbytes
    if offset != len(blob):
        raise CheckpointError(f"{len(blob) - offset} trailing bytes in checkpoint")
    return model
