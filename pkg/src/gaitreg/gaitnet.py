"""Set-based gait recognition network.

Frames go through a shared CNN one by one, an element-wise max over the
frame axis merges them into one set-level map, and horizontal pyramid mapping
turns that map into 2^S - 1 strip features.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .data.preprocess import GAIT_SIZE


def set_pool(maps) -> torch.Tensor:
    """Element-wise max over frames.

    Accepts a list of equally shaped per-frame maps or a tensor whose axis 1
    is the frame axis.
    """
    if isinstance(maps, (list, tuple)):
        if not maps:
            raise ValueError("set_pool needs at least one frame")
        return torch.stack(list(maps), 0).max(0).values
    if maps.shape[1] == 0:
        raise ValueError("set_pool needs at least one frame")
    return maps.max(1).values


def n_strips(scales: int) -> int:
    return 2 ** scales - 1


@dataclass
class StripFeatures:
    strips: torch.Tensor   # (B, 2^S - 1, d)

    @property
    def flat(self) -> torch.Tensor:
        return self.strips.flatten(1)


class GaitNet(nn.Module):
    def __init__(self, channels=(32, 64, 128), scales: int = 5, strip_dim: int = 64):
        super().__init__()
        c1, c2, c3 = channels
        self.channels, self.scales, self.strip_dim = tuple(channels), scales, strip_dim
        self.convs = nn.ModuleList([
            nn.Conv2d(1, c1, 5, padding=2, bias=False), nn.Conv2d(c1, c1, 3, padding=1, bias=False),
            nn.Conv2d(c1, c2, 3, padding=1, bias=False), nn.Conv2d(c2, c2, 3, padding=1, bias=False),
            nn.Conv2d(c2, c3, 3, padding=1, bias=False), nn.Conv2d(c3, c3, 3, padding=1, bias=False),
        ])
        strips = n_strips(scales)
        self.strip_weight = nn.Parameter(torch.empty(strips, c3, strip_dim))
        self.strip_bias = nn.Parameter(torch.zeros(strips, strip_dim))
        for conv in self.convs:
            nn.init.xavier_uniform_(conv.weight)
        nn.init.xavier_uniform_(self.strip_weight)

    @property
    def feature_dim(self) -> int:
        return n_strips(self.scales) * self.strip_dim

    def frame_maps(self, frames: torch.Tensor) -> torch.Tensor:
        """(B, T, h, w) -> per-frame maps (B, T, C, h/4, w/4)."""
        b, t = frames.shape[:2]
        x = frames.reshape(b * t, 1, *frames.shape[2:])
        for k, conv in enumerate(self.convs):
            x = F.leaky_relu(conv(x), 0.01)
            if k in (1, 3):
                x = F.max_pool2d(x, 2)
        return x.view(b, t, *x.shape[1:])

    def hpm(self, set_map: torch.Tensor) -> torch.Tensor:
        feats = []
        for s in range(self.scales):
            bins = 2 ** s
            pooled = F.adaptive_max_pool2d(set_map, (bins, 1)) + F.adaptive_avg_pool2d(set_map, (bins, 1))
            feats.append(pooled[..., 0])          # (B, C, bins)
        x = torch.cat(feats, 2).permute(2, 0, 1)   # (strips, B, C)
        return (torch.bmm(x, self.strip_weight) + self.strip_bias[:, None]).permute(1, 0, 2)

    def forward(self, frames: torch.Tensor) -> StripFeatures:
        if frames.dim() == 3:
            frames = frames[None]
        if frames.dim() != 4 or frames.shape[-2:] != (GAIT_SIZE, GAIT_SIZE):
            raise ValueError(f"expected (B, T, {GAIT_SIZE}, {GAIT_SIZE}) frames, got {tuple(frames.shape)}")
        return StripFeatures(self.hpm(set_pool(self.frame_maps(frames))))


def pairwise_distance(x: torch.Tensor) -> torch.Tensor:
    """Euclidean distances over the last two axes: (..., B, d) -> (..., B, B)."""
    diff = x[..., :, None, :] - x[..., None, :, :]
    return (diff * diff).sum(-1).clamp_min(1e-12).sqrt()


def separate_triplet_loss(strips: torch.Tensor, labels: torch.Tensor, margin: float = 0.2) -> torch.Tensor:
    """Batch-all triplet loss computed per strip, then averaged over strips.

    ``strips`` is (B, n_strips, d). Every (anchor, positive, negative) with
    anchor != positive counts, including inactive ones.
    """
    labels = torch.as_tensor(labels, device=strips.device)
    same = labels[:, None] == labels[None, :]
    eye = torch.eye(len(labels), dtype=torch.bool, device=strips.device)
    pos, neg = same & ~eye, ~same
    if not pos.any(1).all() or not neg.any(1).all():
        raise ValueError("every anchor needs at least one positive and one negative in the batch")
    valid = pos[:, :, None] & neg[:, None, :]
    d = pairwise_distance(strips.transpose(0, 1))                     # (S, B, B)
    hinge = F.relu(margin + d[:, :, :, None] - d[:, :, None, :])      # (S, a, p, n)
    per_strip = (hinge * valid).sum((1, 2, 3)) / valid.sum()
    return per_strip.mean()


def build_gaitnet(cfg) -> GaitNet:
    return GaitNet(cfg.gaitnet_channels, cfg.hpm_scales, cfg.strip_dim)
