"""CMC and loss-curve figures. Each PNG is written next to the CSV it plots."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .core.config import LOSS_NAMES  # noqa: E402
from .eval.evaluate import read_cmc  # noqa: E402

_PNG_META = {"Software": None}


def _cmc_file(path) -> Path:
    p = Path(path)
    return p / "cmc.csv" if p.is_dir() else p


def _label(path: Path) -> str:
    return path.parent.name if path.name == "cmc.csv" else path.stem


def plot_cmc(reports, out_dir) -> list[Path]:
    curves = [(_label(_cmc_file(r)), read_cmc(_cmc_file(r))) for r in reports]
    for name, c in curves:
        if len(c) == 0:
            raise ValueError(f"report {name} has no CMC rows")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "cmc_plot.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["report", "rank", "cmc"])
        for name, c in curves:
            for rank, rate in c:
                wr.writerow([name, int(rank), repr(float(rate))])
    fig, ax = plt.subplots(figsize=(5, 4))
    for name, c in curves:
        ax.plot(c[:, 0], c[:, 1], marker="o" if len(c) == 1 else None, label=name)
    ax.set_xlabel("rank")
    ax.set_ylabel("matching rate")
    ax.set_ylim(0, 1.02)
    ax.legend()
    fig.tight_layout()
    fig.savefig(out / "cmc.png", metadata=_PNG_META)
    plt.close(fig)
    return [out / "cmc.png", out / "cmc_plot.csv"]


def read_loss_log(path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or "step" not in rows[0] or "total" not in rows[0]:
        raise ValueError(f"{path}: not a loss log")
    try:
        return {k: np.array([float(r[k]) for r in rows]) for k in rows[0]}
    except (TypeError, ValueError) as exc:
        raise ValueError(f"{path}: malformed row") from exc


def plot_losses(logs, out_dir) -> list[Path]:
    if not logs:
        raise ValueError("no loss logs given")
    series = [(Path(p), read_loss_log(p)) for p in logs]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = [n for n in (*LOSS_NAMES, "total")]
    with open(out / "loss_plot.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["log", "step", *names])
        for p, d in series:
            for i in range(len(d["step"])):
                wr.writerow([str(p), int(d["step"][i]), *(repr(float(d[n][i])) for n in names if n in d)])
    fig, ax = plt.subplots(figsize=(6, 4))
    for p, d in series:
        tag = f"{p.parent.name}:" if len(series) > 1 else ""
        for n in names:
            if n in d and np.any(d[n] != 0):
                ax.plot(d["step"], d[n], label=f"{tag}{n}")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_yscale("symlog", linthresh=1e-3)
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(out / "loss.png", metadata=_PNG_META)
    plt.close(fig)
    return [out / "loss.png", out / "loss_plot.csv"]
