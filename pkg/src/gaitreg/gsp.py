"""Gait sequence prediction.

An auto-encoder maps one 64 x 64 silhouette to an N-frame gait sequence. A
position embedder regresses where the input sits in the sequence and the
aggregator feeds that estimate, concatenated to the latent code, to the
decoder.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .data.preprocess import GAIT_SIZE


def _trunk(channels) -> nn.Sequential:
    layers, c_in = [], 1
    for c in channels:
        layers += [nn.Conv2d(c_in, c, 4, stride=2, padding=1, bias=False), nn.BatchNorm2d(c), nn.ReLU(inplace=True)]
        c_in = c
    return nn.Sequential(*layers, nn.Flatten())


def _fan_in_init(module: nn.Module) -> None:
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
            nn.init.kaiming_uniform_(m.weight, a=5 ** 0.5)
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.BatchNorm2d):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)


@dataclass
class GaitPrediction:
    frames: torch.Tensor          # (B, N, 64, 64), sigmoid output
    position: torch.Tensor | None  # (B,) predicted position, None without embedder
    latent: torch.Tensor          # (B, latent)
    aggregated: torch.Tensor      # (B, latent) decoder input
    position_logits: torch.Tensor | None = None


class GSP(nn.Module):
    def __init__(self, n_pred: int = 8, channels=(8, 16, 32, 64), latent_dim: int = 100,
                 use_position: bool = True, onehot: bool = False, fg_prior: float = 0.08):
        super().__init__()
        if len(channels) != 4:
            raise ValueError("GSP uses exactly four conv stages")
        self.n_pred, self.latent_dim = n_pred, latent_dim
        self.use_position, self.onehot = use_position, onehot
        self.channels = tuple(channels)
        side = GAIT_SIZE // 16
        flat = channels[-1] * side * side

        self.encoder = nn.Sequential(_trunk(channels), nn.Linear(flat, latent_dim))
        if use_position:
            self.embedder = nn.Sequential(_trunk(channels), nn.Linear(flat, latent_dim),
                                          nn.Linear(latent_dim, n_pred if onehot else 1))
            self.aggregator = nn.Linear(latent_dim + 1, latent_dim)
        self.decoder_fc = nn.Linear(latent_dim, flat)
        ups, rev = [], list(channels[::-1]) + [n_pred]
        for k, (c_in, c_out) in enumerate(zip(rev[:-1], rev[1:])):
            ups.append(nn.ConvTranspose2d(c_in, c_out, 4, stride=2, padding=1, bias=k == 3))
            if k < 3:
                ups += [nn.BatchNorm2d(c_out), nn.ReLU(inplace=True)]
        self.decoder = nn.Sequential(*ups)
        _fan_in_init(self)
        # start the sigmoid at the typical foreground fraction instead of 0.5
        nn.init.constant_(self.decoder[-1].bias, math.log(fg_prior / (1.0 - fg_prior)))

    def forward(self, sil: torch.Tensor) -> GaitPrediction:
        x = check_silhouettes(sil)
        f_s = self.encoder(x)
        logits = None
        if self.use_position:
            out = self.embedder(x)
            if self.onehot:
                logits = out
                grid = torch.arange(self.n_pred, dtype=out.dtype, device=out.device)
                p = (out.softmax(1) * grid).sum(1)
            else:
                p = out[:, 0]
            agg = self.aggregator(torch.cat([f_s, p[:, None]], 1))
        else:
            p, agg = None, f_s
        side = GAIT_SIZE // 16
        h = self.decoder_fc(agg).view(-1, self.channels[-1], side, side)
        frames = torch.sigmoid(self.decoder(h))
        return GaitPrediction(frames, p, f_s, agg, logits)


def check_silhouettes(sil: torch.Tensor) -> torch.Tensor:
    if sil.dim() == 2:
        sil = sil[None]
    if sil.dim() == 3:
        sil = sil[:, None]
    if sil.dim() != 4 or sil.shape[1:] != (1, GAIT_SIZE, GAIT_SIZE):
        raise ValueError(f"expected (B, 1, {GAIT_SIZE}, {GAIT_SIZE}) silhouettes, got {tuple(sil.shape)}")
    if not torch.isfinite(sil).all():
        raise ValueError("non-finite silhouette values")
    return sil


def gsp_losses(pred: GaitPrediction, target: torch.Tensor, mode: str = "full",
               position_target: int | torch.Tensor | None = None) -> tuple[torch.Tensor, torch.Tensor]:
    """Return ``(L_position, L_pred)`` averaged over the batch.

    ``full``: target is the ground-truth sequence (B, N, 64, 64) and L_pred is
    its mean squared error. ``weak``: target is the input silhouette and
    L_pred is the mean absolute error against the middle predicted frame.
    The position target defaults to N // 2. Without a position embedder
    L_position is zero.
    """
    frames = pred.frames
    n = frames.shape[1]
    if mode == "full":
        if target.dim() == 3:
            target = target[None]
        if target.shape != frames.shape:
            raise ValueError(f"target sequence {tuple(target.shape)} does not match prediction {tuple(frames.shape)}")
        l_pred = F.mse_loss(frames, target)
    elif mode == "weak":
        target = target.reshape(frames.shape[0], *frames.shape[2:])
        l_pred = (frames[:, n // 2] - target).abs().mean()
    else:
        raise ValueError(f"unknown mode {mode!r}")

    if pred.position is None:
        return frames.new_zeros(()), l_pred
    if position_target is None:
        position_target = n // 2
    tgt = torch.as_tensor(position_target, device=frames.device)
    if tgt.dim() == 0:
        tgt = tgt.expand(frames.shape[0])
    if pred.position_logits is not None:
        l_pos = F.cross_entropy(pred.position_logits, tgt.long())
    else:
        l_pos = ((pred.position - tgt.to(pred.position.dtype)) ** 2).mean()
    return l_pos, l_pred


def input_position(policy: str, n: int, rng) -> int:
    """Index of the ground-truth frame fed to GSP under a position policy."""
    if policy == "mid":
        return n // 2
    if policy == "begin":
        return 0
    if policy == "end":
        return n - 1
    if policy == "arb":
        return int(rng.integers(n))
    raise ValueError(f"unknown position policy {policy!r}")


def build_gsp(cfg) -> GSP:
    return GSP(cfg.n_pred, cfg.gsp_channels, cfg.latent_dim,
               use_position=cfg.position_policy != "arb", onehot=cfg.position_onehot)
