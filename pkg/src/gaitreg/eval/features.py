"""Descriptor extraction for every inference mode."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from ..core.checkpoint import load_checkpoint
from ..core.config import INFERENCE_MODES, Config
from ..data.dataset import DatasetIndex
from ..trainer import TwoStream, gait_stream_frames, load_reid_images, restore_two_stream

# checkpoint components each mode reads; the reid checkpoint also carries the
# variant / image-size metadata, so it is always loaded
MODE_COMPONENTS = {
    "r": ("reid",),
    "gait-only": ("reid", "gsp", "gaitnet"),
    "embedded-sum": ("reid", "gsp", "gaitnet", "sc"),
    "recon-sum": ("reid", "gsp", "gaitnet", "sc"),
    "recon-r": ("reid", "sc"),
    "concat-rg": ("reid", "gsp", "gaitnet"),
}


class MissingComponent(ValueError):
    pass


@dataclass
class FeatureTable:
    features: np.ndarray          # (n, d), unit rows
    meta: dict                    # identity / camera / outfit / frame arrays
    mode: str
    gait_calls: int               # forward invocations of GSP or the gait network


def load_models(ckpt_dir: str | Path, cfg: Config, mode: str, allow_mismatch: bool = False) -> TwoStream:
    """Load just the checkpoints ``mode`` needs from ``<ckpt_dir>/<component>``."""
    if mode not in INFERENCE_MODES:
        raise ValueError(f"unknown inference mode {mode!r}")
    root = Path(ckpt_dir)
    states = {}
    for comp in MODE_COMPONENTS[mode]:
        path = root / comp
        if not (path / "manifest.json").exists():
            if comp == "gsp" and "reid" in states and states["reid"].meta.get("variant") == "gs-concat":
                continue
            raise MissingComponent(f"mode {mode} needs the {comp} checkpoint, not found under {root}")
        states[comp] = load_checkpoint(path, cfg.model_fingerprint(), allow_mismatch=allow_mismatch)
    return restore_two_stream(cfg, states)


def _require(model: TwoStream, mode: str):
    need = {"gait-only": ("gaitnet",), "embedded-sum": ("gaitnet", "sc"), "recon-sum": ("gaitnet", "sc"),
            "recon-r": ("sc",), "concat-rg": ("gaitnet",)}.get(mode, ())
    if "gaitnet" in need and model.variant != "gs-concat":
        need = ("gsp", *need)
    for comp in need:
        if getattr(model, comp) is None:
            raise MissingComponent(f"mode {mode} needs the {comp} component")


def _pad_sum(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    d = max(a.shape[1], b.shape[1])
    return F.pad(a, (0, d - a.shape[1])) + F.pad(b, (0, d - b.shape[1]))


@torch.no_grad()
def extract_features(index: DatasetIndex, model: TwoStream, mode: str, cfg: Config,
                     batch_size: int = 64) -> FeatureTable:
    if mode not in INFERENCE_MODES:
        raise ValueError(f"unknown inference mode {mode!r}")
    _require(model, mode)
    model.eval()
    calls = [0]
    hooks = [m.register_forward_hook(lambda *_: calls.__setitem__(0, calls[0] + 1))
             for m in (model.gsp, model.gaitnet) if m is not None]
    h, w = model.reid.image_size
    icfg = cfg.replace(image_height=h, image_width=w)
    needs_r = mode != "gait-only"
    needs_g = mode in ("gait-only", "embedded-sum", "recon-sum", "concat-rg")
    out = []
    try:
        for s in range(0, len(index), batch_size):
            idx = np.arange(s, min(len(index), s + batch_size))
            r = g = None
            if needs_r:
                images = load_reid_images(index, idx, icfg, with_mask=model.reid.in_channels == 4)
                r = model.reid.features(images)
            if needs_g:
                sil = torch.from_numpy(index.silhouettes(idx))
                frames, _ = gait_stream_frames(model, sil, cfg)
                g = model.gaitnet(frames).flat
            if mode == "r":
                d = r
            elif mode == "gait-only":
                d = g
            elif mode == "concat-rg":
                d = torch.cat([r, g], 1)
            elif mode == "recon-r":
                d = model.sc.recon_r(model.sc.emb_r(r))
            else:
                r_hat, g_hat = model.sc.embed(r, g)
                if mode == "embedded-sum":
                    d = r_hat + g_hat
                else:
                    d = _pad_sum(*model.sc.reconstruct(r_hat, g_hat))
            out.append(F.normalize(d.double(), dim=1).numpy())
    finally:
        for hk in hooks:
            hk.remove()
    feats = np.concatenate(out) if out else np.zeros((0, 0))
    meta = {k: np.asarray(index.meta[k]) for k in ("identity", "camera", "outfit", "frame")}
    return FeatureTable(feats, meta, mode, calls[0])
