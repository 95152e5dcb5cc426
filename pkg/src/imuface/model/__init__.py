from .config import ModelConfig, VARIANTS, fd_config, full_config, toy_config
from .layers import ModelError, Param, causal_mask, sinusoidal_encoding, softmax
from .network import AuForecaster, FeatureExtractor
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint

__all__ = [
    "AuForecaster", "CheckpointError", "FeatureExtractor", "ModelConfig",
    "ModelError", "Param", "VARIANTS", "causal_mask", "fd_config",
    "full_config", "load_checkpoint", "save_checkpoint",
    "sinusoidal_encoding", "softmax", "toy_config",
]
