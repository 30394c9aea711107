"""Three-phase training.

Phase 1 pre-trains the gait network on silhouette sets with the separate
triplet loss. Phase 2 warms up GSP on (input frame -> ground-truth sequence)
pairs, then trains GSP and the gait network jointly. Phase 3 trains the ReID
backbone together with the gait stream on ReID data; the gait stream only
sees the single mask of each image, so its prediction loss is the weak L1
form.

An "epoch" is ``steps_per_epoch`` PK batches. Every phase writes a per-step
and a per-epoch CSV loss log and checkpoints its components.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .core.checkpoint import ModelState, save_checkpoint
from .core.config import LOSS_NAMES, Config
from .core.rng import rng, seed_torch
from .data.dataset import DatasetIndex
from .data.preprocess import body_color_jitter
from .data.sampler import PKSampler
from .gaitnet import GaitNet, build_gaitnet, separate_triplet_loss
from .gsp import GSP, build_gsp, gsp_losses, input_position
from .reid import ReidNet, build_reid, reid_losses
from .sc import SCLayers, mmd_loss, mse_align_loss, recon_loss

log = logging.getLogger(__name__)

LOG_COLUMNS = ("epoch", "step", *LOSS_NAMES, "total", "lr", "lr_gait")
GAIT_VARIANTS = ("gs-concat", "gsp-concat", "full")


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class PhaseSchedule:
    phase: str
    epochs: int
    lr: float
    milestones: tuple[int, ...] = ()
    gamma: float = 1.0
    weight_decay: float = 0.0
    P: int = 2
    K: int = 2
    weights: dict = field(default_factory=dict)
    gait_lr: float | None = None   # phase 3 only: constant gait-stream lr

    def lr_at(self, epoch: int) -> float:
        """Learning rate during 0-based ``epoch`` (step decay at milestones)."""
        return self.lr * self.gamma ** sum(1 for m in self.milestones if epoch >= m)


def schedule_for(cfg: Config, phase: str) -> PhaseSchedule:
    if phase == "1":
        return PhaseSchedule("1", cfg.p1_epochs, cfg.p1_lr, cfg.p1_milestones, cfg.p1_gamma, cfg.p1_wd,
                             cfg.p1_P, cfg.p1_K, {"tri_sep": 1.0})
    if phase == "2a":
        pos = 0.0 if cfg.position_policy == "arb" else 1.0
        return PhaseSchedule("2a", cfg.p2a_epochs, cfg.p2a_lr, cfg.p2a_milestones, cfg.p2a_gamma, cfg.p2a_wd,
                             cfg.p2_P, cfg.n_pred, {"position": pos, "pred": 1.0})
    if phase == "2b":
        pos = 0.0 if cfg.position_policy == "arb" else 1.0
        return PhaseSchedule("2b", cfg.p2b_epochs, cfg.p2b_lr, cfg.p2b_milestones, cfg.p2b_gamma, cfg.p2b_wd,
                             cfg.p2_P, cfg.n_pred, {"position": pos, "pred": 1.0, "tri_sep": 1.0})
    if phase == "3":
        return PhaseSchedule("3", cfg.p3_epochs, cfg.p3_reid_lr, cfg.p3_milestones, cfg.p3_gamma, cfg.p3_wd,
                             cfg.p3_P, cfg.p3_K, phase3_weights(cfg), gait_lr=cfg.p3_gait_lr)
    raise ValueError(f"unknown phase {phase!r}")


def phase3_weights(cfg: Config, variant: str | None = None) -> dict[str, float]:
    """Configured weights with the components a variant does not use zeroed."""
    variant = variant or cfg.variant
    active = {"cla", "tri_hm"}
    if variant in GAIT_VARIANTS:
        active.add("tri_sep")
    if variant in ("gsp-concat", "full"):
        active.add("pred")
        if cfg.position_policy != "arb":
            active.add("position")
    if variant == "full":
        active.add("mmd")
        if cfg.recon:
            active.add("recon")
    return {name: (getattr(cfg, "w_" + name) if name in active else 0.0) for name in LOSS_NAMES}


def compose_phase3_loss(components: dict, weights: dict) -> torch.Tensor:
    """Exact weighted sum of the seven named loss components."""
    total = None
    for name in LOSS_NAMES:
        w = float(weights.get(name, 0.0))
        if w < 0:
            raise ValueError(f"negative weight for {name}")
        if w == 0.0:
            continue
        term = w * components[name]
        total = term if total is None else total + term
    if total is None:
        ref = next((v for v in components.values() if torch.is_tensor(v)), None)
        return ref.new_zeros(()) if ref is not None else torch.zeros(())
    return total


class LossLog:
    """Append-only CSV of per-step rows plus a per-epoch summary file."""

    def __init__(self, out_dir: Path | None, phase: str):
        self.rows: list[dict] = []
        self.epoch_rows: list[dict] = []
        self._pending: list[dict] = []
        self.out_dir = out_dir
        self.phase = phase
        if out_dir is not None:
            out_dir.mkdir(parents=True, exist_ok=True)
            for name in ("loss_steps.csv", "loss_log.csv"):
                with open(out_dir / name, "w", newline="") as fh:
                    csv.writer(fh).writerow(LOG_COLUMNS)

    @staticmethod
    def _fmt(v):
        return repr(float(v)) if isinstance(v, float) else str(v)

    def _append(self, name: str, row: dict):
        if self.out_dir is not None:
            with open(self.out_dir / name, "a", newline="") as fh:
                csv.writer(fh).writerow([self._fmt(row[c]) for c in LOG_COLUMNS])

    def step(self, epoch: int, step: int, comps: dict, total: float, lr: float, lr_gait: float = 0.0):
        row = {"epoch": epoch, "step": step, **{n: float(comps.get(n, 0.0)) for n in LOSS_NAMES},
               "total": float(total), "lr": float(lr), "lr_gait": float(lr_gait)}
        self.rows.append(row)
        self._pending.append(row)
        self._append("loss_steps.csv", row)

    def end_epoch(self):
        if not self._pending:
            return
        last = self._pending[-1]
        row = {"epoch": last["epoch"], "step": last["step"], "lr": last["lr"], "lr_gait": last["lr_gait"]}
        for c in (*LOSS_NAMES, "total"):
            row[c] = float(np.mean([r[c] for r in self._pending]))
        self.epoch_rows.append(row)
        self._pending = []
        self._append("loss_log.csv", row)


def _set_lr(opt: torch.optim.Optimizer, lr: float):
    for group in opt.param_groups:
        group["lr"] = lr


def _check_finite(total: torch.Tensor, comps: dict, phase: str, step: int):
    if not torch.isfinite(total):
        dump = {k: float(v) for k, v in comps.items()}
        raise TrainingDiverged(f"phase {phase} step {step}: non-finite loss; components {dump}")


def _scalars(comps: dict) -> dict:
    return {k: float(v.detach()) if torch.is_tensor(v) else float(v) for k, v in comps.items()}


def _save(states: dict[str, ModelState], out_dir: Path | None, extra_meta: dict | None = None):
    if out_dir is None:
        return
    for name, st in states.items():
        save_checkpoint(st, out_dir / "checkpoints" / name)
    if extra_meta:
        (out_dir / "train_meta.json").write_text(json.dumps(extra_meta, indent=1, sort_keys=True))


def arch_meta(module) -> dict:
    """Constructor arguments of a network, stored with its checkpoint."""
    if isinstance(module, GSP):
        return {"n_pred": module.n_pred, "channels": list(module.channels), "latent_dim": module.latent_dim,
                "use_position": module.use_position, "onehot": module.onehot}
    if isinstance(module, GaitNet):
        return {"channels": list(module.channels), "scales": module.scales, "strip_dim": module.strip_dim}
    if isinstance(module, SCLayers):
        return {"r_dim": module.r_dim, "g_dim": module.g_dim, "common_dim": module.common_dim}
    if isinstance(module, ReidNet):
        return {"n_classes": module.n_classes, "channels": list(module.channels), "feature_dim": module.feature_dim,
                "in_channels": module.in_channels, "image_size": list(module.image_size)}
    raise TypeError(f"no architecture record for {type(module).__name__}")


def snapshot(component: str, module, cfg: Config, **meta) -> ModelState:
    return ModelState.from_module(component, module, cfg.model_fingerprint(), {**arch_meta(module), **meta})


def build_from_meta(component: str, meta: dict):
    if component == "gsp":
        return GSP(meta["n_pred"], tuple(meta["channels"]), meta["latent_dim"], meta["use_position"], meta["onehot"])
    if component == "gaitnet":
        return GaitNet(tuple(meta["channels"]), meta["scales"], meta["strip_dim"])
    if component == "sc":
        return SCLayers(meta["r_dim"], meta["g_dim"], meta["common_dim"])
    if component == "reid":
        return ReidNet(meta["n_classes"], tuple(meta["channels"]), meta["feature_dim"], meta["in_channels"],
                       tuple(meta["image_size"]))
    raise ValueError(f"unknown component {component!r}")


def restore_module(state: ModelState):
    """Rebuild a network from a checkpoint written by this module."""
    if state.component == "reid":
        params = {k: v for k, v in state.params.items() if not k.startswith("fusion.")}
        state = ModelState("reid", params, state.fingerprint, meta=state.meta)
    module = build_from_meta(state.component, state.meta)
    state.load_into(module)
    return module.eval()


def _require_identities(index: DatasetIndex, n: int):
    if len(np.unique(index.identities)) < n:
        raise ValueError(f"training data needs at least {n} identities")


# ---------------------------------------------------------------- phase 1

def _set_batch(index: DatasetIndex, anchors: np.ndarray, cardinality: int, track_of: np.ndarray,
               tracks: list[np.ndarray], g: np.random.Generator) -> torch.Tensor:
    sets = []
    for a in anchors:
        members = tracks[track_of[a]]
        pick = g.choice(members, size=cardinality, replace=len(members) < cardinality)
        sets.append(index.silhouettes(pick))
    return torch.from_numpy(np.stack(sets))


def _track_lookup(index: DatasetIndex):
    tracks = index.tracks()
    track_of = np.empty(len(index), dtype=np.int64)
    for t, members in enumerate(tracks):
        track_of[members] = t
    return tracks, track_of


def run_phase1(gait_data: DatasetIndex, cfg: Config, out_dir: str | Path | None = None,
               schedule: PhaseSchedule | None = None) -> dict[str, ModelState]:
    """Pre-train the gait network with the separate triplet loss."""
    schedule = schedule or schedule_for(cfg, "1")
    _require_identities(gait_data, 2)
    out = Path(out_dir) if out_dir is not None else None
    seed_torch(cfg.seed, "init:gaitnet")
    net = build_gaitnet(cfg)
    net.train()
    opt = torch.optim.Adam(net.parameters(), lr=schedule.lr, weight_decay=schedule.weight_decay)
    sampler = PKSampler(gait_data.identities, schedule.P, schedule.K, cfg.seed * 1000 + 1, cfg.pk_fallback)
    g = rng(cfg.seed, "phase1:sets")
    tracks, track_of = _track_lookup(gait_data)
    labels_all = torch.tensor(gait_data.identities)
    logbook = LossLog(out, "1")
    step = 0
    for epoch in range(schedule.epochs):
        lr = schedule.lr_at(epoch)
        _set_lr(opt, lr)
        for _ in range(cfg.steps_per_epoch):
            anchors = sampler()
            sets = _set_batch(gait_data, anchors, cfg.set_cardinality, track_of, tracks, g)
            feats = net(sets)
            loss = separate_triplet_loss(feats.strips, labels_all[anchors], cfg.margin_sep)
            comps = {"tri_sep": loss}
            _check_finite(loss, _scalars(comps), "1", step)
            opt.zero_grad()
            loss.backward()
            opt.step()
            logbook.step(epoch, step, _scalars(comps), float(loss.detach()), lr)
            step += 1
        logbook.end_epoch()
    states = {"gaitnet": snapshot("gaitnet", net, cfg, phase="1")}
    _save(states, out)
    return states


# ---------------------------------------------------------------- phase 2

def _windows(index: DatasetIndex, anchors: np.ndarray, n: int, track_of, tracks):
    """Ground-truth windows of n consecutive frames around each anchor."""
    seqs = []
    for a in anchors:
        members = tracks[track_of[a]]
        q = int(np.flatnonzero(members == a)[0])
        start = min(max(q - n // 2, 0), len(members) - n)
        seqs.append(index.silhouettes(members[start:start + n]))
    return np.stack(seqs)


def phase2_batch(index: DatasetIndex, anchors, cfg: Config, track_of, tracks, g):
    """(inputs (B,64,64), targets (B,N,64,64), position targets (B,)) for a batch."""
    gt = _windows(index, anchors, cfg.n_pred, track_of, tracks)
    pos = np.array([input_position(cfg.position_policy, cfg.n_pred, g) for _ in anchors])
    inputs = gt[np.arange(len(anchors)), pos]
    return torch.from_numpy(inputs), torch.from_numpy(gt), torch.from_numpy(pos)


def _restore_gaitnet(cfg: Config, state: ModelState | None) -> GaitNet:
    seed_torch(cfg.seed, "init:gaitnet")
    net = build_gaitnet(cfg)
    if state is not None:
        state.load_into(net)
    return net


def run_phase2(gait_data: DatasetIndex, cfg: Config, out_dir: str | Path | None = None,
               gaitnet_state: ModelState | None = None, stages=("2a", "2b")) -> dict[str, ModelState]:
    """GSP warm-up (2a), then joint GSP + gait network training (2b)."""
    out = Path(out_dir) if out_dir is not None else None
    if "2b" in stages and gaitnet_state is None:
        raise ValueError("the joint stage needs a phase-1 gait network checkpoint")
    _require_identities(gait_data, 2)
    tracks, track_of = _track_lookup(gait_data)
    short = [len(t) for t in tracks if len(t) < cfg.n_pred]
    if short:
        raise ValueError(f"tracks shorter than n_pred={cfg.n_pred} frames (shortest has {min(short)})")

    seed_torch(cfg.seed, "init:gsp")
    gsp = build_gsp(cfg)
    gaitnet = _restore_gaitnet(cfg, gaitnet_state)
    labels_all = torch.tensor(gait_data.identities)
    g = rng(cfg.seed, "phase2:positions")
    sampler = PKSampler(gait_data.identities, cfg.p2_P, cfg.p2_tracks, cfg.seed * 1000 + 2, cfg.pk_fallback)
    step = 0
    for stage in stages:
        schedule = schedule_for(cfg, stage)
        params = list(gsp.parameters()) + (list(gaitnet.parameters()) if stage == "2b" else [])
        opt = torch.optim.Adam(params, lr=schedule.lr, weight_decay=schedule.weight_decay)
        gsp.train()
        gaitnet.train()
        logbook = LossLog(out / f"phase{stage}" if out else None, stage)
        for epoch in range(schedule.epochs):
            lr = schedule.lr_at(epoch)
            _set_lr(opt, lr)
            for _ in range(cfg.steps_per_epoch):
                anchors = sampler()
                inputs, gt, pos = phase2_batch(gait_data, anchors, cfg, track_of, tracks, g)
                pred = gsp(inputs)
                l_pos, l_pred = gsp_losses(pred, gt, "full", pos)
                comps = {"position": l_pos, "pred": l_pred}
                if stage == "2b":
                    feats = gaitnet(pred.frames)
                    comps["tri_sep"] = separate_triplet_loss(feats.strips, labels_all[anchors], cfg.margin_sep)
                total = compose_phase3_loss(comps, schedule.weights)
                _check_finite(total, _scalars(comps), stage, step)
                opt.zero_grad()
                total.backward()
                opt.step()
                logbook.step(epoch, step, _scalars(comps), float(total.detach()), lr)
                step += 1
            logbook.end_epoch()
        stage_states = {"gsp": snapshot("gsp", gsp, cfg, phase=stage)}
        if stage == "2b":
            stage_states["gaitnet"] = snapshot("gaitnet", gaitnet, cfg, phase="2b")
        _save(stage_states, out / f"phase{stage}" if out else None)
    states = {"gsp": snapshot("gsp", gsp, cfg, phase=stages[-1]),
              "gaitnet": snapshot("gaitnet", gaitnet, cfg, phase=stages[-1])}
    _save(states, out)
    return states


# ---------------------------------------------------------------- phase 3

class TwoStream(nn.Module):
    """All trainable parts of phase 3.

    ``fusion`` classifies the concatenation [r, g] for the concat variants;
    it is stored with the ReID component.
    """

    def __init__(self, cfg: Config, n_classes: int, variant: str):
        super().__init__()
        self.variant = variant
        seed_torch(cfg.seed, "init:reid")
        self.reid = build_reid(cfg, n_classes, 4 if variant == "silhouette" else 3)
        self.gsp: GSP | None = None
        self.gaitnet: GaitNet | None = None
        self.sc: SCLayers | None = None
        self.fusion: nn.Linear | None = None
        if variant in ("gsp-concat", "full"):
            seed_torch(cfg.seed, "init:gsp")
            self.gsp = build_gsp(cfg)
        if variant in GAIT_VARIANTS:
            self.gaitnet = _restore_gaitnet(cfg, None)
        g_dim = self.gaitnet.feature_dim if self.gaitnet is not None else 0
        if variant == "full":
            seed_torch(cfg.seed, "init:sc")
            self.sc = SCLayers(cfg.reid_dim, g_dim, cfg.sc_dim)
        if variant in ("gs-concat", "gsp-concat"):
            seed_torch(cfg.seed, "init:fusion")
            self.fusion = nn.Linear(cfg.reid_dim + g_dim, n_classes)

    def gait_parameters(self):
        return [p for m in (self.gsp, self.gaitnet) if m is not None for p in m.parameters()]

    def reid_parameters(self):
        return [p for m in (self.reid, self.sc, self.fusion) if m is not None for p in m.parameters()]

    def reid_state_dict(self) -> dict:
        out = dict(self.reid.state_dict())
        if self.fusion is not None:
            out.update({f"fusion.{k}": v for k, v in self.fusion.state_dict().items()})
        return out


def reid_meta(model: TwoStream, label_map: dict) -> dict:
    return {"n_classes": model.reid.n_classes, "in_channels": model.reid.in_channels,
            "variant": model.variant, "image_size": list(model.reid.image_size),
            "fusion_dim": model.fusion.in_features if model.fusion is not None else 0,
            "labels": [int(k) for k in sorted(label_map, key=label_map.get)]}


def export_states(model: TwoStream, cfg: Config, label_map: dict, weights: dict,
                  carried: dict[str, ModelState] | None = None) -> dict[str, ModelState]:
    fp = cfg.model_fingerprint()
    meta = {**reid_meta(model, label_map), **arch_meta(model.reid), "loss_weights": [weights[n] for n in LOSS_NAMES]}
    states = {"reid": ModelState("reid", {k: v.detach().float().numpy() for k, v in model.reid_state_dict().items()},
                                 fp, meta=meta)}
    for k in ("gsp", "gaitnet"):
        module = getattr(model, k)
        if module is not None:
            states[k] = snapshot(k, module, cfg, phase="3")
        elif carried and k in carried:
            # untouched gait components ride along so a run keeps the full set
            states[k] = carried[k]
    if model.sc is not None:
        states["sc"] = snapshot("sc", model.sc, cfg, phase="3")
    return states


def load_reid_images(index: DatasetIndex, idx, cfg: Config, with_mask: bool = False,
                     jitter_seed: int | None = None) -> torch.Tensor:
    rgb = index.rgb(idx)
    if jitter_seed is not None and cfg.jitter_strength > 0:
        masks = index.masks(idx)
        rgb = np.stack([body_color_jitter(x, m, cfg.jitter_strength, jitter_seed + k)
                        for k, (x, m) in enumerate(zip(rgb, masks))])
    x = torch.from_numpy(rgb)
    if with_mask:
        x = torch.cat([x, torch.from_numpy(index.masks(idx))[:, None]], 1)
    if tuple(x.shape[-2:]) != (cfg.image_height, cfg.image_width):
        x = F.interpolate(x, size=(cfg.image_height, cfg.image_width), mode="area")
    return x


def gait_stream_frames(model: TwoStream, sil: torch.Tensor, cfg: Config):
    """Frames fed to the gait network, plus the GSP prediction (or None)."""
    if model.variant == "gs-concat":
        return sil[:, None].expand(-1, cfg.n_pred, -1, -1), None
    pred = model.gsp(sil)
    return pred.frames, pred


def phase3_step(model: TwoStream, images, sil, labels, cfg: Config) -> dict[str, torch.Tensor]:
    """Forward pass of one phase-3 batch; returns every loss component."""
    zero = images.new_zeros(())
    comps = {n: zero for n in LOSS_NAMES}
    r, logits = model.reid(images)
    if model.variant in ("baseline", "silhouette", "full"):
        comps["cla"], comps["tri_hm"] = reid_losses(r, logits, labels, cfg.margin_hm)
    if model.variant not in GAIT_VARIANTS:
        return comps
    frames, pred = gait_stream_frames(model, sil, cfg)
    if pred is not None:
        policy = cfg.position_policy if cfg.position_policy != "arb" else "mid"
        target = input_position(policy, cfg.n_pred, None)
        comps["position"], comps["pred"] = _weak_losses(pred, sil, target)
    feats = model.gaitnet(frames)
    comps["tri_sep"] = separate_triplet_loss(feats.strips, labels, cfg.margin_sep)
    g = feats.flat
    if model.fusion is not None:
        fused = torch.cat([r, g], 1)
        comps["cla"], comps["tri_hm"] = reid_losses(fused, model.fusion(fused), labels, cfg.margin_hm)
    if model.sc is not None:
        r_hat, g_hat = model.sc.embed(r, g)
        if cfg.sc_align == "mmd":
            comps["mmd"] = mmd_loss(g_hat, r_hat, cfg.sc_sigma)
        else:
            comps["mmd"] = mse_align_loss(g_hat, r_hat)
        if cfg.recon:
            r_t, g_t = model.sc.reconstruct(r_hat, g_hat)
            comps["recon"] = recon_loss(r_t, r, g_t, g)
    return comps


def _init_sc(model: TwoStream, reid_data: DatasetIndex, cfg: Config, schedule: PhaseSchedule):
    """Data-dependent SC start from one PK batch drawn off the training stream."""
    idx = PKSampler(reid_data.identities, schedule.P, schedule.K, cfg.seed * 1000 + 4, cfg.pk_fallback)()
    # training-mode statistics, as the first steps will see them; the batch
    # norm running buffers are restored afterwards
    buffers = {k: v.clone() for k, v in model.state_dict().items()}
    model.train()
    with torch.no_grad():
        r, _ = model.reid(load_reid_images(reid_data, idx, cfg))
        frames, _ = gait_stream_frames(model, torch.from_numpy(reid_data.silhouettes(idx)), cfg)
        g = model.gaitnet(frames).flat
    model.load_state_dict(buffers)
    seed_torch(cfg.seed, "init:sc")
    model.sc.init_from_batch(r, g)


def _weak_losses(pred, sil, frame_index: int):
    """Position loss towards ``frame_index`` and L1 between that predicted
    frame and the input mask (the middle frame under the default policy)."""
    frames = pred.frames
    l_pred = (frames[:, frame_index] - sil).abs().mean()
    if pred.position is None:
        return frames.new_zeros(()), l_pred
    if pred.position_logits is not None:
        tgt = torch.full((frames.shape[0],), frame_index, dtype=torch.long)
        return F.cross_entropy(pred.position_logits, tgt), l_pred
    return ((pred.position - frame_index) ** 2).mean(), l_pred


def run_phase3(reid_data: DatasetIndex, cfg: Config, out_dir: str | Path | None = None,
               gait_states: dict[str, ModelState] | None = None, variant: str | None = None,
               schedule: PhaseSchedule | None = None) -> dict[str, ModelState]:
    """Joint training of the ReID stream with (depending on the variant) the
    gait stream and the semantics-consistency layers."""
    variant = variant or cfg.variant
    schedule = schedule or schedule_for(cfg, "3")
    weights = phase3_weights(cfg, variant)
    out = Path(out_dir) if out_dir is not None else None
    _require_identities(reid_data, 2)
    if variant in GAIT_VARIANTS:
        needed = ["gaitnet"] if variant == "gs-concat" else ["gsp", "gaitnet"]
        missing = [k for k in needed if not gait_states or k not in gait_states]
        if missing:
            raise ValueError(f"variant {variant} needs phase-2 checkpoints for {missing}")
    if variant in ("baseline", "silhouette", "gs-concat") and not cfg.recon:
        log.warning("recon is off; recon-based inference modes will be unavailable")

    ids = np.unique(reid_data.identities)
    label_map = {int(pid): k for k, pid in enumerate(ids)}
    labels_all = torch.tensor([label_map[int(i)] for i in reid_data.identities])

    model = TwoStream(cfg, len(ids), variant)
    if model.gsp is not None:
        gait_states["gsp"].load_into(model.gsp)
    if model.gaitnet is not None:
        gait_states["gaitnet"].load_into(model.gaitnet)
    if model.sc is not None and cfg.sc_init == "batch":
        _init_sc(model, reid_data, cfg, schedule)
    model.train()

    reid_opt = torch.optim.Adam(model.reid_parameters(), lr=schedule.lr, weight_decay=schedule.weight_decay)
    gait_params = model.gait_parameters()
    gait_opt = torch.optim.Adam(gait_params, lr=schedule.gait_lr, weight_decay=schedule.weight_decay) \
        if gait_params else None
    sampler = PKSampler(reid_data.identities, schedule.P, schedule.K, cfg.seed * 1000 + 3, cfg.pk_fallback)
    logbook = LossLog(out, "3")
    needs_sil = variant in GAIT_VARIANTS
    step = 0
    for epoch in range(schedule.epochs):
        lr = schedule.lr_at(epoch)
        _set_lr(reid_opt, lr)
        for _ in range(cfg.steps_per_epoch):
            idx = sampler()
            images = load_reid_images(reid_data, idx, cfg, with_mask=variant == "silhouette",
                                      jitter_seed=cfg.seed * 1_000_003 + step)
            sil = torch.from_numpy(reid_data.silhouettes(idx)) if needs_sil else None
            comps = phase3_step(model, images, sil, labels_all[idx], cfg)
            total = compose_phase3_loss(comps, weights)
            _check_finite(total, _scalars(comps), "3", step)
            reid_opt.zero_grad()
            if gait_opt is not None:
                gait_opt.zero_grad()
            total.backward()
            reid_opt.step()
            if gait_opt is not None:
                gait_opt.step()
            logbook.step(epoch, step, _scalars(comps), float(total.detach()), lr, schedule.gait_lr or 0.0)
            step += 1
        logbook.end_epoch()

    states = export_states(model, cfg, label_map, weights, gait_states)
    _save(states, out, {"variant": variant, "loss_weights": {n: weights[n] for n in LOSS_NAMES},
                        "config_fingerprint": cfg.fingerprint()})
    return states


def restore_two_stream(cfg: Config, states: dict[str, ModelState]) -> TwoStream:
    """Rebuild a phase-3 model (in eval mode) from checkpoints.

    Only the components present are loaded; the ReID component is required.
    """
    meta = states["reid"].meta
    model = TwoStream.__new__(TwoStream)
    nn.Module.__init__(model)
    model.variant = meta.get("variant", cfg.variant)
    model.reid = restore_module(states["reid"])
    model.gsp = model.gaitnet = model.sc = model.fusion = None
    if meta.get("fusion_dim"):
        model.fusion = nn.Linear(meta["fusion_dim"], meta["n_classes"])
        fusion = {k[len("fusion."):]: v for k, v in states["reid"].params.items() if k.startswith("fusion.")}
        ModelState("reid", fusion).load_into(model.fusion)
    if "gaitnet" in states:
        model.gaitnet = restore_module(states["gaitnet"])
    if "gsp" in states and model.variant != "gs-concat":
        model.gsp = restore_module(states["gsp"])
    if "sc" in states:
        model.sc = restore_module(states["sc"])
    model.eval()
    return model


def train_all(gait_data: DatasetIndex, reid_data: DatasetIndex, cfg: Config,
              out_dir: str | Path | None = None, variant: str | None = None) -> dict[str, ModelState]:
    """Phases 1 -> 2 -> 3 in one call (phases 1-2 skipped for gait-free variants)."""
    variant = variant or cfg.variant
    out = Path(out_dir) if out_dir is not None else None
    gait_states = None
    if variant in GAIT_VARIANTS:
        p1 = run_phase1(gait_data, cfg, out / "phase1" if out else None)
        gait_states = run_phase2(gait_data, cfg, out / "phase2" if out else None, p1["gaitnet"])
    return run_phase3(reid_data, cfg, out / "phase3" if out else None, gait_states, variant)


def lr_table(schedule: PhaseSchedule) -> list[float]:
    return [schedule.lr_at(e) for e in range(schedule.epochs)]


def is_close_schedule(realized: list[float], schedule: PhaseSchedule) -> bool:
    return all(math.isclose(a, b, rel_tol=0, abs_tol=0) for a, b in zip(realized, lr_table(schedule)))
