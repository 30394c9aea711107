"""Image ReID backbone and its two standard losses."""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

from .gaitnet import pairwise_distance


class ReidNet(nn.Module):
    """Small CNN: conv-BN-ReLU-pool stages, global average pool, affine map to r.

    Any module exposing ``forward(images) -> (r, logits)`` and ``feature_dim``
    can stand in for it; the trainer relies on nothing else.
    """

    def __init__(self, n_classes: int, channels=(32, 64, 128, 256), feature_dim: int = 256,
                 in_channels: int = 3, image_size=(128, 64)):
        super().__init__()
        self.in_channels, self.image_size = in_channels, tuple(image_size)
        self.feature_dim, self.n_classes = feature_dim, n_classes
        self.channels = tuple(channels)
        layers, c_in = [], in_channels
        for c in channels:
            layers += [nn.Conv2d(c_in, c, 3, padding=1, bias=False), nn.BatchNorm2d(c), nn.ReLU(inplace=True),
                       nn.MaxPool2d(2)]
            c_in = c
        self.backbone = nn.Sequential(*layers, nn.AdaptiveAvgPool2d(1), nn.Flatten())
        self.embed = nn.Linear(c_in, feature_dim)
        self.classifier = nn.Linear(feature_dim, n_classes)
        for m in self.modules():
            if isinstance(m, nn.Conv2d):
                nn.init.kaiming_normal_(m.weight, mode="fan_out", nonlinearity="relu")
            elif isinstance(m, nn.Linear):
                nn.init.kaiming_uniform_(m.weight, a=5 ** 0.5)
                nn.init.zeros_(m.bias)

    def features(self, images: torch.Tensor) -> torch.Tensor:
        if images.dim() == 3:
            images = images[None]
        if images.shape[1:] != (self.in_channels, *self.image_size):
            raise ValueError(f"expected (B, {self.in_channels}, {self.image_size[0]}, {self.image_size[1]}) "
                             f"images, got {tuple(images.shape)}")
        return self.embed(self.backbone(images))

    def forward(self, images: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        r = self.features(images)
        return r, self.classifier(r)


def batch_hard_triplet_loss(feats: torch.Tensor, labels: torch.Tensor, margin: float = 0.3) -> torch.Tensor:
    labels = torch.as_tensor(labels, device=feats.device)
    same = labels[:, None] == labels[None, :]
    eye = torch.eye(len(labels), dtype=torch.bool, device=feats.device)
    pos, neg = same & ~eye, ~same
    if not pos.any(1).all() or not neg.any(1).all():
        raise ValueError("every anchor needs a positive and a negative in the batch")
    d = pairwise_distance(feats)
    hardest_pos = d.masked_fill(~pos, float("-inf")).max(1).values
    hardest_neg = d.masked_fill(~neg, float("inf")).min(1).values
    return F.relu(margin + hardest_pos - hardest_neg).mean()


def reid_losses(r: torch.Tensor, logits: torch.Tensor, labels: torch.Tensor,
                margin: float = 0.3) -> tuple[torch.Tensor, torch.Tensor]:
    """``(L_cla, L_tri_HM)``: cross-entropy and batch-hard triplet on r."""
    labels = torch.as_tensor(labels, device=logits.device).long()
    if labels.numel() and (labels.min() < 0 or labels.max() >= logits.shape[1]):
        raise ValueError("label outside the classifier's identity range")
    return F.cross_entropy(logits, labels), batch_hard_triplet_loss(r, labels, margin)


def build_reid(cfg, n_classes: int, in_channels: int | None = None) -> ReidNet:
    if in_channels is None:
        in_channels = 4 if cfg.variant == "silhouette" else 3
    return ReidNet(n_classes, cfg.reid_channels, cfg.reid_dim, in_channels, (cfg.image_height, cfg.image_width))
