"""Run configuration.

A config file is a flat JSON object. Every key below is optional; unknown keys
are rejected so that a mistyped ablation flag fails instead of silently
running the default.

Keys
----
seed                     root seed (int)

image_height, image_width   ReID input size (default 128 x 64)
n_pred                   N, frames predicted by GSP (default 8)
set_cardinality          frames per silhouette set in phase 1 (default 30)
gait_data, reid_data     dataset roots used by the CLI ("" = not set)
jitter_strength          body-wise colour jitter applied to ReID training images

gsp_channels             encoder channel plan (default tiny 8,16,32,64)
latent_dim               GSP latent size (default 100)
position_policy          mid | begin | end | arb
position_onehot          classify the position instead of regressing it
gaitnet_channels         (C1/C2, C3/C4, C5/C6) (default 32,64,128)
hpm_scales               S (default 5)
strip_dim                d, per-strip feature size (default 64)
reid_channels            ReID conv plan (default 32,64,128,256)
reid_dim                 length of r (default 256)
sc_dim                   common embedding size c (default 256)
sc_align                 mmd | mse
sc_sigma                 var | std
sc_init                  batch (data-dependent SC start) | default (torch Linear init)
recon                    enable the reconstruction penalty

steps_per_epoch          PK batches per epoch
p1_* / p2a_* / p2b_* / p3_*  per-phase epochs, lr, milestones, gamma, wd, P, K
p2_P, p2_tracks          phase-2 batch: P identities x tracks of n_pred frames
w_position ... w_recon   phase-3 loss weights
margin_sep, margin_hm    triplet margins (0.2 / 0.3)
pk_fallback              repeat samples of identities with fewer than K
variant                  baseline | silhouette | gs-concat | gsp-concat | full

protocol                 standard | cloth-changing
inference_mode           r | gait-only | embedded-sum | recon-sum | recon-r | concat-rg
distance                 euclidean
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Mapping

POSITION_POLICIES = ("mid", "begin", "end", "arb")
VARIANTS = ("baseline", "silhouette", "gs-concat", "gsp-concat", "full")
PROTOCOLS = ("standard", "cloth-changing")
INFERENCE_MODES = ("r", "gait-only", "embedded-sum", "recon-sum", "recon-r", "concat-rg")
LOSS_NAMES = ("position", "pred", "tri_sep", "cla", "tri_hm", "mmd", "recon")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Config:
    seed: int = 0

    # data
    image_height: int = 128
    image_width: int = 64
    n_pred: int = 8
    set_cardinality: int = 30
    gait_data: str = ""
    reid_data: str = ""
    jitter_strength: float = 0.0

    # model
    gsp_channels: tuple[int, ...] = (8, 16, 32, 64)
    latent_dim: int = 100
    position_policy: str = "mid"
    position_onehot: bool = False
    gaitnet_channels: tuple[int, ...] = (32, 64, 128)
    hpm_scales: int = 5
    strip_dim: int = 64
    reid_channels: tuple[int, ...] = (32, 64, 128, 256)
    reid_dim: int = 256
    sc_dim: int = 256
    sc_align: str = "mmd"
    sc_sigma: str = "var"
    sc_init: str = "batch"
    recon: bool = True

    # training
    steps_per_epoch: int = 10
    p1_epochs: int = 80
    p1_lr: float = 1e-4
    p1_milestones: tuple[int, ...] = ()
    p1_gamma: float = 1.0
    p1_wd: float = 0.0
    p1_P: int = 16
    p1_K: int = 8
    p2a_epochs: int = 80
    p2a_lr: float = 5e-4
    p2a_milestones: tuple[int, ...] = (40,)
    p2a_gamma: float = 0.1
    p2a_wd: float = 1e-4
    p2b_epochs: int = 160
    p2b_lr: float = 5e-4
    p2b_milestones: tuple[int, ...] = (40, 80, 120)
    p2b_gamma: float = 0.5
    p2b_wd: float = 1e-4
    p2_P: int = 4
    p2_tracks: int = 2
    p3_epochs: int = 240
    p3_gait_lr: float = 1e-5
    p3_reid_lr: float = 5e-4
    p3_milestones: tuple[int, ...] = (80, 160)
    p3_gamma: float = 0.1
    p3_wd: float = 1e-5
    p3_P: int = 10
    p3_K: int = 8
    w_position: float = 0.1
    w_pred: float = 0.1
    w_tri_sep: float = 0.1
    w_cla: float = 1.0
    w_tri_hm: float = 1.0
    w_mmd: float = 0.5
    w_recon: float = 0.5
    margin_sep: float = 0.2
    margin_hm: float = 0.3
    pk_fallback: bool = True
    variant: str = "full"

    # eval
    protocol: str = "standard"
    inference_mode: str = "r"
    distance: str = "euclidean"

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, list):
                object.__setattr__(self, f.name, tuple(value))
        validate(self)

    @property
    def loss_weights(self) -> tuple[float, ...]:
        return tuple(getattr(self, "w_" + name) for name in LOSS_NAMES)

    def to_dict(self) -> dict[str, Any]:
        out = dataclasses.asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in out.items()}

    def replace(self, **changes) -> "Config":
        return from_dict({**self.to_dict(), **changes})

    def fingerprint(self) -> str:
        """Hash of the whole resolved config."""
        return _digest(self.to_dict())

    def model_fingerprint(self) -> str:
        """Hash of the keys that fix parameter shapes; stored with checkpoints."""
        d = self.to_dict()
        return _digest({k: d[k] for k in ARCH_KEYS})


ARCH_KEYS = ("image_height", "image_width", "n_pred", "gsp_channels", "latent_dim", "position_policy",
             "position_onehot", "gaitnet_channels", "hpm_scales", "strip_dim", "reid_channels", "reid_dim", "sc_dim")


def _digest(d: dict) -> str:
    blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


_FIELD_TYPES = {f.name: f.type for f in fields(Config)}


def _coerce(key: str, value: Any) -> Any:
    kind = _FIELD_TYPES[key]
    try:
        if kind.startswith("tuple"):
            if isinstance(value, str):
                value = [v for v in value.split(",") if v.strip()]
            return tuple(int(v) for v in value)
        if kind == "bool":
            if isinstance(value, str):
                if value.lower() in ("1", "true", "yes", "on"):
                    return True
                if value.lower() in ("0", "false", "no", "off"):
                    return False
                raise ValueError(value)
            return bool(value)
        if kind == "int":
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        if kind == "float":
            return float(value)
        return str(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {key!r}: {value!r}") from exc


def from_dict(data: Mapping[str, Any]) -> Config:
    unknown = sorted(set(data) - set(_FIELD_TYPES))
    if unknown:
        raise ConfigError(f"unknown config key {unknown[0]!r}")
    return Config(**{k: _coerce(k, v) for k, v in data.items()})


def load_config(path: str | Path, overrides: Mapping[str, Any] | None = None) -> Config:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text(encoding="utf-8")
    try:
        data = json.loads(text) if text.strip() else {}
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    if overrides:
        data = {**data, **overrides}
    return from_dict(data)


def validate(cfg: Config) -> None:
    def need(cond: bool, msg: str):
        if not cond:
            raise ConfigError(msg)

    need(cfg.n_pred >= 2, "n_pred must be >= 2")
    need(cfg.latent_dim >= 1, "latent_dim must be >= 1")
    need(cfg.hpm_scales >= 1, "hpm_scales must be >= 1")
    need(cfg.strip_dim >= 1 and cfg.reid_dim >= 1 and cfg.sc_dim >= 1, "feature dims must be >= 1")
    need(cfg.set_cardinality >= 1, "set_cardinality must be >= 1")
    need(cfg.steps_per_epoch >= 1, "steps_per_epoch must be >= 1")
    need(len(cfg.gsp_channels) == 4, "gsp_channels needs 4 entries")
    need(len(cfg.gaitnet_channels) == 3, "gaitnet_channels needs 3 entries")
    need(len(cfg.reid_channels) >= 1, "reid_channels needs at least 1 entry")
    need(cfg.image_height >= 16 and cfg.image_width >= 8, "image size too small")
    need(0.0 <= cfg.jitter_strength <= 1.0, "jitter_strength must be in [0, 1]")
    need(cfg.position_policy in POSITION_POLICIES, f"position_policy must be one of {POSITION_POLICIES}")
    need(cfg.variant in VARIANTS, f"variant must be one of {VARIANTS}")
    need(cfg.protocol in PROTOCOLS, f"protocol must be one of {PROTOCOLS}")
    need(cfg.inference_mode in INFERENCE_MODES, f"inference_mode must be one of {INFERENCE_MODES}")
    need(cfg.sc_align in ("mmd", "mse"), "sc_align must be mmd or mse")
    need(cfg.sc_sigma in ("var", "std"), "sc_sigma must be var or std")
    need(cfg.sc_init in ("batch", "default"), "sc_init must be batch or default")
    need(cfg.distance == "euclidean", "distance must be euclidean")
    for name in LOSS_NAMES:
        need(getattr(cfg, "w_" + name) >= 0, f"w_{name} must be >= 0")
    need(cfg.margin_sep >= 0 and cfg.margin_hm >= 0, "margins must be >= 0")
    for phase in ("p1", "p2a", "p2b"):
        need(getattr(cfg, f"{phase}_epochs") >= 0, f"{phase}_epochs must be >= 0")
        need(getattr(cfg, f"{phase}_lr") > 0, f"{phase}_lr must be > 0")
    need(cfg.p3_epochs >= 0 and cfg.p3_gait_lr > 0 and cfg.p3_reid_lr > 0, "bad phase-3 schedule")
    # every phase trains with a triplet loss, so P and K are always constrained
    for phase in ("p1", "p2", "p3"):
        need(getattr(cfg, f"{phase}_P") >= 2, "P must be ≥ 2")
    for phase in ("p1", "p3"):
        need(getattr(cfg, f"{phase}_K") >= 2, "K must be ≥ 2")
    need(cfg.p2_tracks >= 2, "p2_tracks must be >= 2")
