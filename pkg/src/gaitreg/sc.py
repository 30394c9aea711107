"""Semantics-consistency layers: shared embedding, distribution alignment,
reconstruction."""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn


class SCLayers(nn.Module):
    def __init__(self, r_dim: int, g_dim: int, common_dim: int = 256):
        super().__init__()
        self.r_dim, self.g_dim, self.common_dim = r_dim, g_dim, common_dim
        self.emb_r = nn.Linear(r_dim, common_dim)
        self.emb_g = nn.Linear(g_dim, common_dim)
        self.recon_r = nn.Linear(common_dim, r_dim)
        self.recon_g = nn.Linear(common_dim, g_dim)

    @torch.no_grad()
    def init_from_batch(self, r: torch.Tensor, g: torch.Tensor, generator: torch.Generator | None = None):
        """Data-dependent start: semi-orthogonal Emb_r, a semi-orthogonal Emb_g
        rescaled per output so that g^ has the batch mean and variance of r^,
        and Recon layers set to the pseudo-inverses of the Emb layers. Both
        SC losses then start near zero instead of dwarfing the ReID losses."""
        w_r = _semi_orthogonal(self.common_dim, self.r_dim, generator).to(r.dtype)
        self.emb_r.weight.copy_(w_r)
        self.emb_r.bias.zero_()
        r_hat = r @ w_r.T
        q = _semi_orthogonal(self.common_dim, self.g_dim, generator).to(g.dtype)
        z = g @ q.T
        scale = r_hat.std(0, correction=0) / z.std(0, correction=0).clamp_min(1e-6)
        self.emb_g.weight.copy_(q * scale[:, None])
        self.emb_g.bias.copy_(r_hat.mean(0) - scale * z.mean(0))
        for emb, rec in ((self.emb_r, self.recon_r), (self.emb_g, self.recon_g)):
            inv = torch.linalg.pinv(emb.weight)
            rec.weight.copy_(inv)
            rec.bias.copy_(-inv @ emb.bias)

    def embed(self, r: torch.Tensor, g: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        if r.shape[-1] != self.r_dim or g.shape[-1] != self.g_dim:
            raise ValueError(f"expected r/g dims {self.r_dim}/{self.g_dim}, got {r.shape[-1]}/{g.shape[-1]}")
        return self.emb_r(r), self.emb_g(g)

    def reconstruct(self, r_hat: torch.Tensor, g_hat: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        if r_hat.shape[-1] != self.common_dim or g_hat.shape[-1] != self.common_dim:
            raise ValueError("embedded features must have the common dimension")
        return self.recon_r(r_hat), self.recon_g(g_hat)


def _semi_orthogonal(rows: int, cols: int, generator=None) -> torch.Tensor:
    """Matrix with orthonormal rows (rows <= cols) or columns (rows > cols)."""
    a = torch.randn(max(rows, cols), min(rows, cols), generator=generator, dtype=torch.float64)
    q, rr = torch.linalg.qr(a)
    q = q * torch.sign(torch.diagonal(rr))
    return (q.T if rows <= cols else q).float()


def sc_embed(r, g, layers: SCLayers):
    return layers.embed(r, g)


def sc_reconstruct(r_hat, g_hat, layers: SCLayers):
    return layers.reconstruct(r_hat, g_hat)


def mmd_loss(g_hat: torch.Tensor, r_hat: torch.Tensor, sigma: str = "var") -> torch.Tensor:
    """Squared distance between per-dimension batch means plus squared
    distance between per-dimension population variances (or std with
    ``sigma="std"``)."""
    if g_hat.shape[0] < 2 or r_hat.shape[0] < 2:
        raise ValueError("mmd_loss needs batches of at least 2 rows")
    if g_hat.shape[1:] != r_hat.shape[1:]:
        raise ValueError("embedded features differ in dimension")
    if sigma not in ("var", "std"):
        raise ValueError(f"unknown sigma {sigma!r}")
    spread = torch.var if sigma == "var" else torch.std
    mean_term = ((g_hat.mean(0) - r_hat.mean(0)) ** 2).sum()
    spread_term = ((spread(g_hat, 0, correction=0) - spread(r_hat, 0, correction=0)) ** 2).sum()
    return mean_term + spread_term


def mse_align_loss(g_hat: torch.Tensor, r_hat: torch.Tensor) -> torch.Tensor:
    """Element-wise alternative to ``mmd_loss`` pairing row i with row i."""
    return F.mse_loss(r_hat, g_hat)


def recon_loss(r_tilde: torch.Tensor, r: torch.Tensor, g_tilde: torch.Tensor, g: torch.Tensor) -> torch.Tensor:
    """Batch mean of ||g~ - g||^2 + ||r~ - r||^2 (squared norms summed over dims)."""
    if r_tilde.shape != r.shape or g_tilde.shape != g.shape:
        raise ValueError("reconstruction shape mismatch")
    if r.dim() == 1:
        r_tilde, r, g_tilde, g = r_tilde[None], r[None], g_tilde[None], g[None]
    return (((g_tilde - g) ** 2).sum(1) + ((r_tilde - r) ** 2).sum(1)).mean()
