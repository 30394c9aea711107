"""Per-query ranking kernels.

For every query the valid gallery items are ordered by ascending distance,
ties broken by gallery index (stable sort). The kernels return, per query,
the 1-based rank of the first correct match (0 when there is none), the
average precision, and the number of valid candidates.
"""

from __future__ import annotations

import numpy as np

from .._accel import njit, use_numba


@njit
def _scan_nb(order, valid, positive):
    nq, ng = order.shape
    first = np.zeros(nq, dtype=np.int64)
    ap = np.zeros(nq, dtype=np.float64)
    n_valid = np.zeros(nq, dtype=np.int64)
    for q in range(nq):
        rank = 0
        hits = 0
        total = 0.0
        for k in range(ng):
            j = order[q, k]
            if not valid[q, j]:
                continue
            rank += 1
            if positive[q, j]:
                hits += 1
                total += hits / float(rank)
                if hits == 1:
                    first[q] = rank
        n_valid[q] = rank
        if hits > 0:
            ap[q] = total / hits
    return first, ap, n_valid


def _scan_np(order, valid, positive):
    nq, ng = order.shape
    if ng == 0:
        return np.zeros(nq, np.int64), np.zeros(nq), np.zeros(nq, np.int64)
    vs = np.take_along_axis(valid, order, 1)
    ps = np.take_along_axis(positive, order, 1) & vs
    rank = np.cumsum(vs, 1)
    hit_count = np.cumsum(ps, 1)
    hits = hit_count[:, -1]
    # zeros between hits leave the running sum bit-identical to the loop
    total = np.cumsum(np.where(ps, hit_count / np.maximum(rank, 1), 0.0), 1)[:, -1]
    ap = np.where(hits > 0, total / np.maximum(hits, 1), 0.0)
    first = np.where(hits > 0, rank[np.arange(nq), ps.argmax(1)], 0).astype(np.int64)
    return first, ap, rank[:, -1].astype(np.int64)


def _rank_nb(dist, valid, positive):
    return _scan_nb(np.argsort(dist, axis=1, kind="stable"), valid, positive)


def _rank_np(dist, valid, positive):
    return _scan_np(np.argsort(dist, axis=1, kind="stable"), valid, positive)


def rank_queries(dist: np.ndarray, valid: np.ndarray, positive: np.ndarray, accel: bool | None = None):
    """``(first_hit_rank, ap, n_valid)`` for each row of ``dist``.

    One stable argsort orders every row (ties go to the lower gallery index);
    the scan then skips invalid items, which equals sorting the valid subset.
    """
    dist = np.ascontiguousarray(dist, dtype=np.float64)
    valid = np.ascontiguousarray(valid, dtype=np.bool_)
    positive = np.ascontiguousarray(positive, dtype=np.bool_)
    if not (dist.shape == valid.shape == positive.shape) or dist.ndim != 2:
        raise ValueError("distance, validity and positive matrices must share one 2-D shape")
    if accel is None:
        accel = use_numba()
    return (_rank_nb if accel else _rank_np)(dist, valid, positive)
