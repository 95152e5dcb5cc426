"""Architecture hyperparameters and the full/toy scale presets."""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

VARIANTS = ("h-c-dec", "a-transformer", "c-enc", "c-enc-h")


@dataclass
class ModelConfig:
    variant: str = "h-c-dec"
    scale: str = "full"
    d_model: int = 256
    n_head: int = 8
    d_ff: int = 512
    enc_layers: int = 6
    dec_layers: int = 6
    dropout: float = 0.1
    cnn_dropout: float = 0.5
    history_len: int = 15
    target_len: int = 45
    patch_len: int = 200
    in_channels: int = 12
    feature_dim: int = 106
    au_channels: int = 14
    cnn_channels: tuple[int, int, int, int] = (24, 48, 96, 96)
    dtype: str = "float32"
    init_seed: int = 0

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.d_model % self.n_head:
            raise ValueError("d_model must be divisible by n_head")
        if self.history_len <= 0 or self.target_len <= 0:
            raise ValueError("history_len and target_len must be positive")
        self.cnn_channels = tuple(self.cnn_channels)
        if len(self.cnn_channels) != 4:
            raise ValueError("cnn_channels must list the four conv widths")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")

    @property
    def seq_len(self) -> int:
        return self.history_len + self.target_len

    @property
    def cnn_flat_dim(self) -> int:
        # Two stride-2 pools; same-length convolutions.
        return (self.patch_len // 2 // 2) * self.cnn_channels[3]

    @property
    def np_dtype(self) -> np.dtype:
        return np.dtype(self.dtype)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["cnn_channels"] = list(self.cnn_channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["cnn_channels"] = tuple(d["cnn_channels"])
        return cls(**d)


def full_config(variant: str = "h-c-dec", **overrides) -> ModelConfig:
    return ModelConfig(variant=variant, scale="full", **overrides)


def toy_config(variant: str = "h-c-dec", **overrides) -> ModelConfig:
    """Desk-scale preset used by the ablation and smoke training runs."""
    base = dict(variant=variant, scale="toy", d_model=64, n_head=4, d_ff=128,
                enc_layers=2, dec_layers=2, patch_len=20,
                cnn_channels=(16, 16, 32, 32))
    base.update(overrides)
    return ModelConfig(**base)


def fd_config(variant: str = "h-c-dec", **overrides) -> ModelConfig:
    """Tiny float64 preset for exhaustive finite-difference checking."""
    base = dict(variant=variant, scale="toy", d_model=8, n_head=2, d_ff=16,
                enc_layers=1, dec_layers=1, patch_len=12,
                cnn_channels=(4, 4, 8, 8), feature_dim=24, dtype="float64")
    base.update(overrides)
    return ModelConfig(**base)
