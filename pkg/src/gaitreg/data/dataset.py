"""Person samples, dataset indices, synthetic generation and directory I/O.

On-disk layout::

    <root>/{train,query,gallery}/rgb/<id4>_c<cam>_o<outfit>_f<frame>.png
    <root>/{train,query,gallery}/masks/<same name>.png

RGB files are 8-bit 3-channel PNG, masks 8-bit single-channel (0 or 255).
Frames of one (id, cam, outfit) are grouped into tracks of consecutive frame
numbers; a gap in the numbering starts a new track.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np
from PIL import Image

from ..core.rng import rng
from .preprocess import GAIT_SIZE, preprocess_mask
from .walker import camera_transform, identity_params, outfit_palette, render_walker_frame

SPLITS = ("train", "query", "gallery")
NAME_RE = re.compile(r"^(\d{4})_c(\d+)_o(\d+)_f(\d+)\.png$")


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class PersonSample:
    rgb: np.ndarray          # (3, H, W) float32 in [0, 1]
    mask: np.ndarray         # (H, W) float32 in [0, 1], registered to rgb
    identity: int
    camera: int
    outfit: int
    frame: int
    split: str = "train"


@dataclass(frozen=True)
class GaitSequence:
    frames: np.ndarray       # (N, 64, 64) float32

    def __post_init__(self):
        object.__setattr__(self, "frames", np.asarray(self.frames, dtype=np.float32))
        if self.frames.ndim != 3 or len(self.frames) < 1:
            raise ValueError("a gait sequence is a non-empty (N, h, w) stack")

    @property
    def p_mid(self) -> int:
        return len(self.frames) // 2


def parse_name(name: str) -> tuple[int, int, int, int]:
    m = NAME_RE.match(name)
    if m is None:
        raise DatasetError(f"unparseable file name: {name}")
    return tuple(int(g) for g in m.groups())  # type: ignore[return-value]


def format_name(identity: int, cam: int, outfit: int, frame: int) -> str:
    return f"{identity:04d}_c{cam}_o{outfit}_f{frame:03d}.png"


class DatasetIndex:
    """Immutable table of samples with lazily materialised images.

    Images come either from in-memory uint8 arrays (synthetic data) or from
    PNG paths read on first access.
    """

    def __init__(self, meta: dict[str, np.ndarray], rgb=None, masks=None,
                 rgb_paths=None, mask_paths=None, split_tag: str = "all"):
        n = len(meta["identity"])
        self.meta = {k: np.asarray(v) for k, v in meta.items()}
        for k in ("identity", "camera", "outfit", "frame", "track"):
            self.meta[k] = self.meta[k].astype(np.int64)
            if len(self.meta[k]) != n:
                raise ValueError(f"meta column {k} has wrong length")
            if (self.meta[k] < 0).any():
                raise ValueError(f"negative {k}")
        self.meta["split"] = np.asarray(self.meta["split"]).astype(str)
        self._rgb = rgb
        self._masks = masks
        self._rgb_paths = rgb_paths
        self._mask_paths = mask_paths
        self._sil: np.ndarray | None = None
        self.split_tag = split_tag
        for arr in self.meta.values():
            arr.setflags(write=False)

    def __len__(self) -> int:
        return len(self.meta["identity"])

    @property
    def identities(self) -> np.ndarray:
        return self.meta["identity"]

    def _load(self, which: str, idx: np.ndarray) -> np.ndarray:
        arr = self._rgb if which == "rgb" else self._masks
        if arr is not None:
            return arr[idx]
        paths = self._rgb_paths if which == "rgb" else self._mask_paths
        out = []
        for i in idx:
            img = np.asarray(Image.open(paths[i]))
            if which == "rgb":
                img = img[..., :3].transpose(2, 0, 1) if img.ndim == 3 else np.repeat(img[None], 3, 0)
            elif img.ndim == 3:
                img = img[..., 0]
            out.append(img)
        return np.stack(out)

    def rgb(self, idx) -> np.ndarray:
        idx = np.atleast_1d(np.asarray(idx, dtype=np.int64))
        return self._load("rgb", idx).astype(np.float32) / 255.0

    def masks(self, idx) -> np.ndarray:
        idx = np.atleast_1d(np.asarray(idx, dtype=np.int64))
        m = self._load("mask", idx).astype(np.float32)
        return m / 255.0 if m.max(initial=0.0) > 1.0 else m

    def silhouettes(self, idx) -> np.ndarray:
        """Preprocessed 64 x 64 silhouettes (cached for the whole index)."""
        if self._sil is None:
            sil = np.empty((len(self), GAIT_SIZE, GAIT_SIZE), dtype=np.float32)
            step = 256
            for s in range(0, len(self), step):
                chunk = np.arange(s, min(len(self), s + step))
                for i, m in zip(chunk, self.masks(chunk)):
                    sil[i] = preprocess_mask(m)
            self._sil = sil
        return self._sil[np.asarray(idx, dtype=np.int64)]

    def sample(self, i: int) -> PersonSample:
        m = self.meta
        return PersonSample(self.rgb(i)[0], self.masks(i)[0], int(m["identity"][i]), int(m["camera"][i]),
                            int(m["outfit"][i]), int(m["frame"][i]), str(m["split"][i]))

    def subset(self, idx, split_tag: str | None = None) -> "DatasetIndex":
        idx = np.asarray(idx, dtype=np.int64)
        pick = lambda a: None if a is None else (a[idx] if isinstance(a, np.ndarray) else [a[i] for i in idx])
        sub = DatasetIndex({k: v[idx] for k, v in self.meta.items()}, pick(self._rgb), pick(self._masks),
                           pick(self._rgb_paths), pick(self._mask_paths), split_tag or self.split_tag)
        if self._sil is not None:
            sub._sil = self._sil[idx]
        return sub

    def split(self, tag: str) -> "DatasetIndex":
        if tag not in SPLITS:
            raise ValueError(f"unknown split {tag!r}")
        return self.subset(np.flatnonzero(self.meta["split"] == tag), tag)

    def tracks(self) -> list[np.ndarray]:
        """Sample indices of every track, each sorted by frame number."""
        m = self.meta
        keys = np.stack([m["identity"], m["camera"], m["outfit"], m["track"], m["frame"]], 1)
        order = np.lexsort(keys.T[::-1])
        k = keys[order]
        new = np.ones(len(order), dtype=bool)
        new[1:] = (k[1:, :4] != k[:-1, :4]).any(1)
        starts = np.flatnonzero(new)
        return np.split(order, starts[1:]) if len(order) else []

    def rgb_shape(self) -> tuple[int, int]:
        return tuple(self.rgb(0).shape[-2:])  # type: ignore[return-value]


def _check_counts(**counts):
    for name, v in counts.items():
        if int(v) < 1:
            raise DatasetError(f"{name} must be ≥ 1")


def generate_synthetic_dataset(ids: int, outfits: int, cams: int, tracks: int, frames: int, seed: int,
                               height: int = 128, width: int = 64, n_train_ids: int | None = None,
                               out_dir: str | Path | None = None, overwrite: bool = False) -> DatasetIndex:
    """Render a cloth-changing walking dataset.

    Every (identity, outfit, camera, track) yields ``frames`` consecutive
    frames. Gait parameters depend on the identity only and the start phase
    of a track on (identity, camera, track), so clothing changes colours but
    never the silhouette. Identities are split into disjoint train/test
    sets; for each test (identity, camera, outfit) the middle frame of track
    0 is a query and everything else goes to the gallery.
    """
    _check_counts(ids=ids, outfits=outfits, cams=cams, tracks=tracks, frames=frames)
    if out_dir is not None:
        out_dir = Path(out_dir)
        if out_dir.exists() and any(out_dir.iterdir()) and not overwrite:
            raise DatasetError(f"output directory {out_dir} exists and is not empty (use overwrite)")
    n_train = ids // 2 if n_train_ids is None else int(n_train_ids)
    if ids > 1 and not 1 <= n_train < ids:
        raise DatasetError("n_train_ids must leave at least one identity on each side")
    perm = rng(seed, "split").permutation(ids)
    train_ids = set(perm[:n_train].tolist()) if ids > 1 else {0}

    n = ids * outfits * cams * tracks * frames
    rgb = np.empty((n, 3, height, width), dtype=np.uint8)
    masks = np.empty((n, height, width), dtype=np.uint8)
    cols = {k: np.empty(n, dtype=np.int64) for k in ("identity", "camera", "outfit", "frame", "track")}
    split = np.empty(n, dtype=object)
    i = 0
    for pid in range(ids):
        params = identity_params(seed, pid)
        palettes = [outfit_palette(seed, pid, o) for o in range(outfits)]
        for cam in range(cams):
            camera = camera_transform(cam)
            for tr in range(tracks):
                phase0 = rng(seed, f"track:{pid}:{cam}:{tr}").uniform(0.0, 2 * np.pi)
                sil_cache = {}
                for o in range(outfits):
                    for f in range(frames):
                        phase = phase0 + f * params.cadence
                        img, sil = render_walker_frame(params, palettes[o], phase, camera, height, width)
                        sil_cache.setdefault(f, sil)
                        rgb[i] = np.round(img * 255.0)
                        masks[i] = sil_cache[f] * 255
                        cols["identity"][i], cols["camera"][i], cols["outfit"][i] = pid, cam, o
                        # a gap of one frame number separates tracks on disk
                        cols["frame"][i] = tr * (frames + 1) + f
                        cols["track"][i] = tr
                        if pid in train_ids:
                            split[i] = "train"
                        else:
                            split[i] = "query" if (tr == 0 and f == frames // 2) else "gallery"
                        i += 1
    cols["split"] = split.astype(str)
    index = DatasetIndex(cols, rgb=rgb, masks=masks)
    if out_dir is not None:
        write_dataset(index, out_dir, overwrite=overwrite)
    return index


def write_dataset(index: DatasetIndex, root: str | Path, overwrite: bool = False) -> None:
    root = Path(root)
    if root.exists() and any(root.iterdir()) and not overwrite:
        raise DatasetError(f"output directory {root} exists and is not empty (use overwrite)")
    m = index.meta
    for tag in SPLITS:
        (root / tag / "rgb").mkdir(parents=True, exist_ok=True)
        (root / tag / "masks").mkdir(parents=True, exist_ok=True)
    for i in range(len(index)):
        name = format_name(int(m["identity"][i]), int(m["camera"][i]), int(m["outfit"][i]), int(m["frame"][i]))
        tag = str(m["split"][i])
        rgb = np.round(index.rgb(i)[0] * 255).astype(np.uint8).transpose(1, 2, 0)
        mask = (index.masks(i)[0] > 0.5).astype(np.uint8) * 255
        Image.fromarray(rgb, "RGB").save(root / tag / "rgb" / name)
        Image.fromarray(mask, "L").save(root / tag / "masks" / name)


def _assign_tracks(ids, cams, outfits, frames) -> np.ndarray:
    track = np.zeros(len(ids), dtype=np.int64)
    order = np.lexsort((frames, outfits, cams, ids))
    prev = None
    t = 0
    for i in order:
        key = (ids[i], cams[i], outfits[i])
        if prev is not None and key == prev[0] and frames[i] == prev[1] + 1:
            pass
        elif prev is not None and key == prev[0]:
            t += 1
        else:
            t = 0
        track[i] = t
        prev = (key, frames[i])
    return track


def _ingest_split(root: Path, tag: str) -> DatasetIndex:
    rgb_dir, mask_dir = root / "rgb", root / "masks"
    if not rgb_dir.is_dir():
        raise DatasetError(f"{root}: missing rgb/ directory")
    files = sorted(p for p in rgb_dir.iterdir() if p.is_file())
    if not files:
        raise DatasetError(f"{rgb_dir}: empty directory")
    rows, rgb_paths, mask_paths = [], [], []
    orphans = []
    for p in files:
        try:
            rows.append(parse_name(p.name))
        except DatasetError as exc:
            raise DatasetError(f"{p}: unparseable name (expected <id4>_c<cam>_o<outfit>_f<frame>.png)") from exc
        mp = mask_dir / p.name
        if not mp.is_file():
            orphans.append(str(p))
        rgb_paths.append(p)
        mask_paths.append(mp)
    if orphans:
        raise DatasetError("rgb files without a matching mask: " + ", ".join(orphans))
    a = np.array(rows, dtype=np.int64)
    meta = {"identity": a[:, 0], "camera": a[:, 1], "outfit": a[:, 2], "frame": a[:, 3],
            "track": _assign_tracks(a[:, 0], a[:, 1], a[:, 2], a[:, 3]),
            "split": np.full(len(a), tag if tag != "all" else "train")}
    return DatasetIndex(meta, rgb_paths=rgb_paths, mask_paths=mask_paths, split_tag=tag)


def ingest_directory(path: str | Path) -> DatasetIndex | dict[str, DatasetIndex]:
    """Index a dataset directory.

    With ``train/ query/ gallery/`` subdirectories a dict of three indices
    is returned; a bare ``rgb/ + masks/`` directory yields one index.
    """
    root = Path(path)
    if not root.is_dir():
        raise DatasetError(f"{root}: not a directory")
    present = [t for t in SPLITS if (root / t).is_dir()]
    if present:
        return {t: _ingest_split(root / t, t) for t in present}
    return _ingest_split(root, "all")


def concat(indices: Iterable[DatasetIndex]) -> DatasetIndex:
    """Merge in-memory or path-backed indices of one kind into one."""
    indices = list(indices)
    meta = {k: np.concatenate([ix.meta[k] for ix in indices]) for k in indices[0].meta}
    if all(ix._rgb is not None for ix in indices):
        return DatasetIndex(meta, rgb=np.concatenate([ix._rgb for ix in indices]),
                            masks=np.concatenate([ix._masks for ix in indices]))
    return DatasetIndex(meta, rgb_paths=sum((list(ix._rgb_paths) for ix in indices), []),
                        mask_paths=sum((list(ix._mask_paths) for ix in indices), []))
