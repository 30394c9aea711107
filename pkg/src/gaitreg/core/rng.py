"""Seed splitting.

One root seed fans out to independent streams: the stream seed for a name is
the first 8 bytes (little endian) of sha256("<name>:<root seed>").
"""

from __future__ import annotations

import hashlib

import numpy as np
import torch


def stream_seed(root: int, name: str) -> int:
    digest = hashlib.sha256(f"{name}:{int(root)}".encode()).digest()
    return int.from_bytes(digest[:8], "little") & 0x7FFF_FFFF_FFFF_FFFF


def rng(root: int, name: str) -> np.random.Generator:
    return np.random.default_rng(stream_seed(root, name))


def seed_torch(root: int, name: str) -> None:
    torch.manual_seed(stream_seed(root, name))
