"""Command-line entry point.

Every subcommand writes ``manifest.json`` (resolved config, seed, content
hash of its inputs, argv) into its output directory. Config keys can be set
on the command line with ``--set key=value`` (repeatable); dedicated flags
such as ``--variant`` or ``--protocol`` are shorthands for the same keys.
Precedence is flag > config file > default. A manifest.json can be passed
as ``--config`` to re-run with its resolved config.

Exit status: 0 on success, 1 with a one-line ``error:`` message on failure,
2 for usage errors.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from .core.checkpoint import load_checkpoint
from .core.config import INFERENCE_MODES, PROTOCOLS, VARIANTS, Config, ConfigError, from_dict, load_config

log = logging.getLogger("gaitreg")

MANIFEST_VERSION = "gaitreg-run/1"


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- helpers

def _parse_sets(pairs) -> dict:
    out = {}
    for item in pairs or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def resolve_config(args, **flag_keys) -> Config:
    overrides = _parse_sets(getattr(args, "set", None))
    overrides.update({k: v for k, v in flag_keys.items() if v is not None})
    path = getattr(args, "config", None)
    if path is None:
        return from_dict(overrides)
    data = json.loads(Path(path).read_text(encoding="utf-8") or "{}") if Path(path).is_file() else None
    if isinstance(data, dict) and data.get("manifest_version") == MANIFEST_VERSION:
        return from_dict({**data["config"], **overrides})
    return load_config(path, overrides)


def _blob_hash(path: Path) -> str:
    data = path.read_bytes()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def content_hash(paths) -> str:
    """Git-style tree hash over every file below the given paths."""
    entries = []
    for p in paths:
        if p is None:
            continue
        p = Path(p)
        files = [p] if p.is_file() else sorted(q for q in p.rglob("*") if q.is_file()) if p.is_dir() else []
        for f in files:
            rel = f.name if f == p else f.relative_to(p).as_posix()
            entries.append(f"{_blob_hash(f)} {p.name}/{rel}")
    return hashlib.sha1("\n".join(entries).encode()).hexdigest()


def write_manifest(out_dir: Path, command: str, argv, cfg: Config | None, inputs, extra=None) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "manifest_version": MANIFEST_VERSION,
        "command": command,
        "argv": list(argv),
        "config": cfg.to_dict() if cfg is not None else None,
        "fingerprint": cfg.fingerprint() if cfg is not None else None,
        "seed": cfg.seed if cfg is not None else None,
        "inputs": [str(p) for p in inputs if p is not None],
        "inputs_hash": content_hash(inputs),
        **(extra or {}),
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))


def _load_split(path, tag: str):
    from .data.dataset import DatasetError, ingest_directory

    data = ingest_directory(path)
    if isinstance(data, dict):
        if tag not in data:
            raise DatasetError(f"{path}: no {tag}/ split")
        return data[tag]
    if tag != "train":
        raise DatasetError(f"{path}: expected train/ query/ gallery/ subdirectories")
    return data


def _ckpt_states(root: Path, names, cfg: Config, allow_mismatch: bool):
    out = {}
    for name in names:
        path = root / name
        if len(names) == 1 and (root / "manifest.json").exists():
            path = root
        if not (path / "manifest.json").exists():
            raise FileNotFoundError(f"checkpoint {path} not found")
        out[name] = load_checkpoint(path, cfg.model_fingerprint(), allow_mismatch=allow_mismatch)
    return out


# ---------------------------------------------------------------- commands

def cmd_synth(args, argv) -> None:
    from .data.dataset import generate_synthetic_dataset

    out = Path(args.out)
    generate_synthetic_dataset(args.ids, args.outfits, args.cams, args.tracks, args.frames, args.seed,
                               args.height, args.width, args.train_ids, out_dir=out, overwrite=args.overwrite)
    params = {k: getattr(args, k) for k in ("ids", "outfits", "cams", "tracks", "frames", "seed", "height",
                                            "width", "train_ids")}
    write_manifest(out, "synth", argv, None, [], {"synth": params})
    print(f"wrote dataset to {out}")


def cmd_pretrain_gaitnet(args, argv) -> None:
    from .trainer import run_phase1

    cfg = resolve_config(args, seed=args.seed)
    data = _load_split(args.data, "train")
    out = Path(args.out)
    write_manifest(out, "pretrain-gaitnet", argv, cfg, [args.config, args.data])
    run_phase1(data, cfg, out)
    print(f"gait network checkpoint: {out / 'checkpoints' / 'gaitnet'}")


def cmd_train_gsp(args, argv) -> None:
    from .trainer import run_phase2

    cfg = resolve_config(args, seed=args.seed, position_policy=args.position)
    stages = ("2a",) if args.warmup_only else ("2a", "2b")
    gait_state = None
    if args.gaitnet:
        gait_state = _ckpt_states(Path(args.gaitnet), ["gaitnet"], cfg, args.allow_mismatch)["gaitnet"]
    elif "2b" in stages:
        raise UsageError("--gaitnet is required unless --warmup-only is given")
    data = _load_split(args.data, "train")
    out = Path(args.out)
    write_manifest(out, "train-gsp", argv, cfg, [args.config, args.data, args.gaitnet])
    run_phase2(data, cfg, out, gait_state, stages)
    print(f"GSP checkpoint: {out / 'checkpoints' / 'gsp'}")


def cmd_train(args, argv) -> None:
    from .trainer import GAIT_VARIANTS, run_phase1, run_phase2, run_phase3

    if args.gait_ckpt and args.gait_data:
        raise UsageError("--gait-ckpt and --gait-data conflict: pass trained checkpoints or data to train them")
    cfg = resolve_config(args, seed=args.seed, variant=args.variant)
    reid_data = _load_split(args.data, "train")
    out = Path(args.out)
    write_manifest(out, "train", argv, cfg, [args.config, args.data, args.gait_ckpt, args.gait_data])
    gait_states = None
    if cfg.variant in GAIT_VARIANTS:
        if args.gait_ckpt:
            gait_states = _ckpt_states(Path(args.gait_ckpt), ["gsp", "gaitnet"], cfg, args.allow_mismatch)
        else:
            gait_data = _load_split(args.gait_data or args.data, "train")
            p1 = run_phase1(gait_data, cfg, out / "phase1")
            gait_states = run_phase2(gait_data, cfg, out / "phase2", p1["gaitnet"])
    run_phase3(reid_data, cfg, out, gait_states, cfg.variant)
    print(f"checkpoints: {out / 'checkpoints'}")


def cmd_eval(args, argv) -> None:
    from .eval import evaluate, load_models

    cfg = resolve_config(args, protocol=args.protocol, inference_mode=args.mode)
    query, gallery = _load_split(args.data, "query"), _load_split(args.data, "gallery")
    out = Path(args.out)
    model = load_models(args.ckpt, cfg, cfg.inference_mode, args.allow_mismatch)
    write_manifest(out, "eval", argv, cfg, [args.config, args.data])
    metrics = evaluate(query, gallery, model, cfg, out_dir=out)
    print((out / "report.txt").read_text(), end="")
    print(f"gait-stream invocations: {metrics.extras['gait_calls']}")


def read_input_mask(path) -> np.ndarray:
    """Mask from a PNG: single-channel files are thresholded at half range,
    colour images at any non-zero channel (background is black)."""
    from PIL import Image, UnidentifiedImageError

    try:
        img = np.asarray(Image.open(path))
    except (OSError, UnidentifiedImageError) as exc:
        raise ValueError(f"cannot read image {path}") from exc
    if img.ndim == 3:
        return (img[..., :3].max(-1) > 0).astype(np.float32)
    scale = 255.0 if img.max(initial=0) > 1 else 1.0
    return (img.astype(np.float32) / scale > 0.5).astype(np.float32)


def _atomic_png(array: np.ndarray, path: Path) -> None:
    from PIL import Image

    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(suffix=".png", dir=path.parent)
    os.close(fd)
    try:
        Image.fromarray(array, "L").save(tmp, format="PNG")
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def cmd_predict_gait(args, argv) -> None:
    import torch

    from .data.preprocess import preprocess_mask
    from .trainer import restore_module

    root = Path(args.ckpt)
    path = root if (root / "manifest.json").exists() else root / "gsp"
    state = load_checkpoint(path)
    if state.component != "gsp":
        raise ValueError(f"{path} holds a {state.component} checkpoint, not gsp")
    gsp = restore_module(state)
    sil = torch.from_numpy(preprocess_mask(read_input_mask(args.input)))
    with torch.no_grad():
        pred = gsp(sil[None])
    frames = pred.frames[0].numpy()
    strip = np.round(np.clip(np.concatenate(list(frames), axis=1), 0, 1) * 255).astype(np.uint8)
    out = Path(args.out)
    _atomic_png(strip, out)
    p = float(pred.position[0]) if pred.position is not None else float("nan")
    print(f"p~ = {p:.4f}")
    print(f"wrote {out} ({strip.shape[1]}x{strip.shape[0]})")


def cmd_plot(args, argv) -> None:
    from .plots import plot_cmc, plot_losses

    if not args.reports and not args.logs:
        raise UsageError("plot needs at least one --reports or --logs file")
    out = Path(args.out)
    written = []
    if args.reports:
        written += plot_cmc(args.reports, out)
    if args.logs:
        written += plot_losses(args.logs, out)
    write_manifest(out, "plot", argv, None, [*(args.reports or []), *(args.logs or [])])
    for w in written:
        print(f"wrote {w}")


# ---------------------------------------------------------------- parser

def _common(p: argparse.ArgumentParser, out_required: bool = True):
    p.add_argument("--config", help="JSON config file (or a run manifest.json)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key (repeatable)")
    p.add_argument("--out", required=out_required, help="output directory")
    p.add_argument("--allow-mismatch", action="store_true",
                   help="load checkpoints whose config fingerprint differs (with a warning)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gaitreg", description=__doc__.split("\n\n")[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="render a synthetic cloth-changing dataset")
    p.add_argument("--ids", type=int, default=28)
    p.add_argument("--outfits", type=int, default=3)
    p.add_argument("--cams", type=int, default=4)
    p.add_argument("--tracks", type=int, default=1)
    p.add_argument("--frames", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--height", type=int, default=128)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--train-ids", type=int, default=None, help="identities in the train split (default half)")
    p.add_argument("--out", required=True)
    p.add_argument("--overwrite", action="store_true")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("pretrain-gaitnet", help="phase 1: gait network on silhouette sets")
    _common(p)
    p.add_argument("--data", required=True, help="dataset root (train/ split is used)")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_pretrain_gaitnet)

    p = sub.add_parser("train-gsp", help="phase 2: GSP warm-up, then joint GSP + gait network")
    _common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--gaitnet", help="phase-1 checkpoint directory (…/checkpoints/gaitnet)")
    p.add_argument("--position", choices=("mid", "begin", "end", "arb"))
    p.add_argument("--warmup-only", action="store_true", help="run only the GSP warm-up stage")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train_gsp)

    p = sub.add_parser("train", help="phase 3 (running phases 1-2 first when needed)")
    _common(p)
    p.add_argument("--data", required=True, help="ReID dataset root")
    p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--gait-ckpt", help="directory holding phase-2 gsp/ and gaitnet/ checkpoints")
    p.add_argument("--gait-data", help="gait dataset for phases 1-2 (default: --data)")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="retrieval metrics on query/gallery")
    _common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True, help="checkpoint directory of a training run")
    p.add_argument("--protocol", choices=PROTOCOLS)
    p.add_argument("--mode", choices=INFERENCE_MODES)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict-gait", help="predict a gait sequence from one mask or image")
    p.add_argument("--input", required=True, help="PNG mask or image")
    p.add_argument("--ckpt", required=True, help="gsp checkpoint directory (or its parent)")
    p.add_argument("--out", required=True, help="output PNG strip")
    p.set_defaults(func=cmd_predict_gait)

    p = sub.add_parser("plot", help="CMC and loss-curve figures")
    p.add_argument("--reports", nargs="*", default=[], help="cmc.csv files or eval output directories")
    p.add_argument("--logs", nargs="*", default=[], help="loss CSV logs")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)
    return ap


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        args.func(args, argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, ValueError, FileNotFoundError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
