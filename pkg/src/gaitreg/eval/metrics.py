"""Evaluation protocols and CMC / mAP."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..core.config import PROTOCOLS
from .kernels import rank_queries

META_KEYS = ("identity", "camera", "outfit")


class NoValidPositives(ValueError):
    pass


def _col(meta, key):
    if isinstance(meta, dict):
        return np.atleast_1d(np.asarray(meta[key]))
    return np.atleast_1d(np.asarray(getattr(meta, key)))


def protocol_filter(query, gallery, protocol: str = "standard") -> np.ndarray:
    """Validity mask of gallery items for one query (or a batch of queries).

    ``query``/``gallery`` are dicts (or objects) with identity, camera and
    outfit fields, scalar or array valued; an optional ``frame`` field
    identifies the query's own record, which is always excluded.
    standard: drop same identity and same camera.
    cloth-changing: also drop same identity and same outfit.
    """
    if protocol not in PROTOCOLS:
        raise ValueError(f"unknown protocol {protocol!r}")
    raw = query["identity"] if isinstance(query, dict) else query.identity
    scalar = np.ndim(raw) == 0
    q = {k: _col(query, k)[:, None] for k in META_KEYS}
    g = {k: _col(gallery, k)[None, :] for k in META_KEYS}
    same_id = q["identity"] == g["identity"]
    drop = same_id & (q["camera"] == g["camera"])
    if protocol == "cloth-changing":
        drop |= same_id & (q["outfit"] == g["outfit"])
    has_frame = (isinstance(query, dict) and "frame" in query and isinstance(gallery, dict) and "frame" in gallery)
    if has_frame:
        own = same_id & (q["camera"] == g["camera"]) & (q["outfit"] == g["outfit"])
        own &= _col(query, "frame")[:, None] == _col(gallery, "frame")[None, :]
        drop |= own
    valid = ~drop
    return valid[0] if scalar else valid


@dataclass
class Metrics:
    cmc: np.ndarray                   # cmc[k-1] = rate of first hit at rank <= k
    mAP: float
    ap: np.ndarray                    # per kept query
    n_valid: np.ndarray               # valid gallery items per query (all queries)
    kept: np.ndarray                  # indices of queries with >= 1 valid positive
    n_queries: int
    extras: dict = field(default_factory=dict)

    @property
    def n_dropped(self) -> int:
        return self.n_queries - len(self.kept)

    def rank(self, k: int) -> float:
        if len(self.cmc) == 0:
            return 0.0
        return float(self.cmc[min(k, len(self.cmc)) - 1])

    def summary(self) -> dict:
        return {"rank1": self.rank(1), "rank5": self.rank(5), "rank10": self.rank(10), "rank20": self.rank(20),
                "mAP": float(self.mAP), "n_queries": self.n_queries, "n_kept": len(self.kept),
                "n_dropped": self.n_dropped}

    def __eq__(self, other):
        return (isinstance(other, Metrics) and np.array_equal(self.cmc, other.cmc) and self.mAP == other.mAP
                and np.array_equal(self.ap, other.ap) and np.array_equal(self.n_valid, other.n_valid))


def cmc_map(dist: np.ndarray, query_meta, gallery_meta, protocol: str = "standard",
            accel: bool | None = None) -> Metrics:
    dist = np.asarray(dist, dtype=np.float64)
    valid = np.atleast_2d(protocol_filter(query_meta, gallery_meta, protocol))
    positive = _col(query_meta, "identity")[:, None] == _col(gallery_meta, "identity")[None, :]
    if valid.shape != dist.shape:
        raise ValueError(f"distance matrix {dist.shape} does not match metas {valid.shape}")
    first, ap, n_valid = rank_queries(dist, valid, positive & valid, accel)
    kept = np.flatnonzero(first > 0)
    if len(kept) == 0:
        raise NoValidPositives("no valid positives under protocol")
    depth = dist.shape[1]
    counts = np.bincount(first[kept] - 1, minlength=depth)
    cmc = np.cumsum(counts) / len(kept)
    return Metrics(cmc, float(ap[kept].mean()), ap[kept], n_valid, kept, dist.shape[0])


def euclidean_distance(q: np.ndarray, g: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    d2 = (q * q).sum(1)[:, None] + (g * g).sum(1)[None, :] - 2.0 * q @ g.T
    return np.sqrt(np.maximum(d2, 0.0))
