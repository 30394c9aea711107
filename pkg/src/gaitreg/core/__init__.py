from .checkpoint import (
    CheckpointError,
    CorruptCheckpoint,
    FingerprintMismatch,
    ModelState,
    ShapeMismatch,
    VersionMismatch,
    load_checkpoint,
    save_checkpoint,
)
from .config import Config, ConfigError, from_dict, load_config
from .rng import rng, seed_torch, stream_seed

__all__ = [
    "CheckpointError", "CorruptCheckpoint", "FingerprintMismatch", "ModelState",
    "ShapeMismatch", "VersionMismatch", "load_checkpoint", "save_checkpoint",
    "Config", "ConfigError", "from_dict", "load_config", "rng", "seed_torch", "stream_seed",
]
