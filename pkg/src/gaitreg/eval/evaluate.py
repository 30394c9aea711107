"""Extract -> distance -> CMC/mAP, plus report files."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from ..core.config import Config
from ..data.dataset import DatasetIndex
from ..trainer import TwoStream
from .features import extract_features
from .metrics import Metrics, cmc_map, euclidean_distance

REPORT_RANKS = (1, 5, 10, 20)


def evaluate(query: DatasetIndex, gallery: DatasetIndex, model: TwoStream, cfg: Config,
             protocol: str | None = None, mode: str | None = None, out_dir: str | Path | None = None,
             fingerprint: str | None = None) -> Metrics:
    protocol = protocol or cfg.protocol
    mode = mode or cfg.inference_mode
    fq = extract_features(query, model, mode, cfg)
    fg = extract_features(gallery, model, mode, cfg)
    metrics = cmc_map(euclidean_distance(fq.features, fg.features), fq.meta, fg.meta, protocol)
    metrics.extras.update({"protocol": protocol, "mode": mode, "gait_calls": fq.gait_calls + fg.gait_calls,
                           "n_gallery": len(gallery), "descriptor_dim": int(fq.features.shape[1]),
                           "fingerprint": fingerprint or cfg.fingerprint()})
    if out_dir is not None:
        write_report(metrics, out_dir)
    return metrics


def write_report(metrics: Metrics, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ex = metrics.extras
    summary = {**metrics.summary(), **ex}
    lines = [f"fingerprint  {ex.get('fingerprint', '')}", f"protocol     {ex.get('protocol', '')}",
             f"mode         {ex.get('mode', '')}",
             f"queries      {metrics.n_queries} ({len(metrics.kept)} kept, {metrics.n_dropped} without a valid match)",
             f"gallery      {ex.get('n_gallery', '')}"]
    lines += [f"rank-{k:<7d}{metrics.rank(k):.4f}" for k in REPORT_RANKS]
    lines.append(f"mAP          {metrics.mAP:.4f}")
    (out / "report.txt").write_text("\n".join(lines) + "\n")
    with open(out / "cmc.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["rank", "cmc"])
        for k, v in enumerate(metrics.cmc, 1):
            wr.writerow([k, repr(float(v))])
    summary["ap"] = [float(a) for a in metrics.ap]
    (out / "metrics.json").write_text(json.dumps(summary, indent=1, sort_keys=True))


def read_cmc(path: str | Path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["rank", "cmc"]:
        raise ValueError(f"{path}: not a cmc.csv file")
    try:
        return np.array([[float(r[0]), float(r[1])] for r in rows[1:]]).reshape(-1, 2)
    except (ValueError, IndexError) as exc:
        raise ValueError(f"{path}: malformed row") from exc
