"""Checkpoint persistence.

A checkpoint is a directory::

    <path>/manifest.json      component, version, config fingerprint, meta,
                              and per-array {name, file, shape, sha256}
    <path>/<name>.f32le       raw little-endian float32, C order

Arrays round-trip bit-exactly. Writes go to a sibling temp directory that is
renamed into place, so a failed save never leaves a half-written checkpoint.
"""

from __future__ import annotations

import hashlib
import json
import os
import shutil
import tempfile
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np

VERSION = "gaitreg-ckpt/1"
COMPONENTS = ("gsp", "gaitnet", "reid", "sc")
_LE_F32 = np.dtype("<f4")


class CheckpointError(RuntimeError):
    pass


class VersionMismatch(CheckpointError):
    pass


class CorruptCheckpoint(CheckpointError):
    pass


class ShapeMismatch(CheckpointError):
    pass


class FingerprintMismatch(CheckpointError):
    pass


@dataclass(frozen=True)
class ModelState:
    component: str
    params: Mapping[str, np.ndarray]
    fingerprint: str = ""
    version: str = VERSION
    meta: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.component not in COMPONENTS:
            raise ValueError(f"unknown component {self.component!r}")
        frozen = {}
        for name, arr in self.params.items():
            a = np.array(arr, dtype=np.float32, copy=True)
            a.setflags(write=False)
            frozen[name] = a
        object.__setattr__(self, "params", frozen)

    @classmethod
    def from_module(cls, component: str, module, fingerprint: str = "", meta=None) -> "ModelState":
        """Snapshot a torch module's parameters and buffers as float32."""
        params = {
            name: t.detach().cpu().float().numpy()
            for name, t in module.state_dict().items()
        }
        return cls(component, params, fingerprint, meta=dict(meta or {}))

    def load_into(self, module, strict: bool = True) -> None:
        import torch

        current = module.state_dict()
        expected = {k: tuple(v.shape) for k, v in current.items()}
        check_shapes(self, expected)
        if strict and set(current) != set(self.params):
            missing = sorted(set(current) - set(self.params))
            raise ShapeMismatch(f"{self.component}: missing parameters {missing[:5]}")
        state = {}
        for name, t in current.items():
            if name in self.params:
                state[name] = torch.from_numpy(np.array(self.params[name])).to(t.dtype)
            else:
                state[name] = t
        module.load_state_dict(state, strict=True)


def check_shapes(state: ModelState, expected: Mapping[str, tuple[int, ...]]) -> None:
    for name, arr in state.params.items():
        if name not in expected:
            raise ShapeMismatch(f"{state.component}: unexpected parameter {name!r}")
        if tuple(arr.shape) != tuple(expected[name]):
            raise ShapeMismatch(
                f"{state.component}.{name}: stored {tuple(arr.shape)} vs expected {tuple(expected[name])}"
            )


def _safe_file(name: str) -> str:
    return name.replace("/", "__") + ".f32le"


def save_checkpoint(state: ModelState, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{path.name}.", dir=path.parent))
    try:
        entries = []
        for name, arr in state.params.items():
            raw = np.ascontiguousarray(arr, dtype=_LE_F32).tobytes()
            fname = _safe_file(name)
            (tmp / fname).write_bytes(raw)
            entries.append(
                {"name": name, "file": fname, "shape": list(arr.shape),
                 "sha256": hashlib.sha256(raw).hexdigest()}
            )
        manifest = {
            "version": state.version,
            "component": state.component,
            "fingerprint": state.fingerprint,
            "meta": dict(state.meta),
            "arrays": entries,
        }
        (tmp / "manifest.json").write_text(json.dumps(manifest, indent=1), encoding="utf-8")
        if path.exists():
            shutil.rmtree(path)
        os.replace(tmp, path)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise


def load_checkpoint(
    path: str | Path,
    fingerprint: str | None = None,
    allow_mismatch: bool = False,
    expected_shapes: Mapping[str, tuple[int, ...]] | None = None,
) -> ModelState:
    path = Path(path)
    mpath = path / "manifest.json"
    if not mpath.is_file():
        raise CorruptCheckpoint(f"{path}: manifest.json missing")
    try:
        manifest = json.loads(mpath.read_text(encoding="utf-8"))
        entries = manifest["arrays"]
        version = manifest["version"]
        component = manifest["component"]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise CorruptCheckpoint(f"{path}: corrupted manifest ({exc})") from exc
    if version != VERSION:
        raise VersionMismatch(f"{path}: version {version!r}, expected {VERSION!r}")

    stored_fp = manifest.get("fingerprint", "")
    if fingerprint is not None and stored_fp != fingerprint:
        msg = f"{path}: config fingerprint {stored_fp} differs from current {fingerprint}"
        if not allow_mismatch:
            raise FingerprintMismatch(msg + " (pass allow_mismatch=True to load anyway)")
        warnings.warn(msg, stacklevel=2)

    params = {}
    for entry in entries:
        try:
            name, fname, shape = entry["name"], entry["file"], tuple(entry["shape"])
        except (KeyError, TypeError) as exc:
            raise CorruptCheckpoint(f"{path}: corrupted manifest entry {entry!r}") from exc
        fpath = path / fname
        if not fpath.is_file():
            raise CorruptCheckpoint(f"{path}: array file {fname} missing")
        raw = fpath.read_bytes()
        if len(raw) != 4 * int(np.prod(shape, dtype=np.int64)):
            raise CorruptCheckpoint(f"{fpath}: {len(raw)} bytes, expected {4 * int(np.prod(shape))}")
        if "sha256" in entry and hashlib.sha256(raw).hexdigest() != entry["sha256"]:
            raise CorruptCheckpoint(f"{fpath}: checksum mismatch")
        params[name] = np.frombuffer(raw, dtype=_LE_F32).reshape(shape).astype(np.float32)

    state = ModelState(component, params, stored_fp, version, manifest.get("meta", {}))
    if expected_shapes is not None:
        check_shapes(state, expected_shapes)
    return state
