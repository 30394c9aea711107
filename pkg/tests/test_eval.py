import itertools
import json

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from gaitreg.eval import (
    NoValidPositives,
    cmc_map,
    euclidean_distance,
    evaluate,
    extract_features,
    load_models,
    protocol_filter,
    rank_queries,
)
from gaitreg.eval.features import MissingComponent
from gaitreg.gaitnet import GaitNet
from gaitreg.reid import ReidNet
from gaitreg.sc import SCLayers
from gaitreg.trainer import TwoStream

from conftest import tiny_config


def meta(ids, cams, outfits, frames=None):
    m = {"identity": np.array(ids), "camera": np.array(cams), "outfit": np.array(outfits)}
    if frames is not None:
        m["frame"] = np.array(frames)
    return m


# ---------------------------------------------------------------- brute-force reference

def reference(dist, qm, gm, protocol):
    """Definition-chasing evaluator: filter each gallery item by the written
    rule, place every valid item at 1 + #(items strictly before it), where
    "before" means smaller distance or equal distance and smaller index."""
    firsts, aps, kept = [], [], []
    for q in range(dist.shape[0]):
        valid = []
        for j in range(dist.shape[1]):
            same_id = qm["identity"][q] == gm["identity"][j]
            drop = same_id and qm["camera"][q] == gm["camera"][j]
            if protocol == "cloth-changing":
                drop = drop or (same_id and qm["outfit"][q] == gm["outfit"][j])
            if not drop:
                valid.append(j)
        rank = {j: 1 + sum(1 for k in valid if dist[q, k] < dist[q, j] or (dist[q, k] == dist[q, j] and k < j))
                for j in valid}
        hits = sorted(rank[j] for j in valid if qm["identity"][q] == gm["identity"][j])
        if not hits:
            continue
        kept.append(q)
        firsts.append(hits[0])
        total = 0.0
        for n, r in enumerate(hits, 1):
            total += n / float(r)
        aps.append(total / len(hits))
    return kept, firsts, aps


def permutation_reference(dist_row, valid, positive):
    """Smallest-index-first ordering found by scanning every permutation."""
    items = [j for j in range(len(dist_row)) if valid[j]]
    best = None
    for perm in itertools.permutations(items):
        ok = all(dist_row[a] < dist_row[b] or (dist_row[a] == dist_row[b] and a < b)
                 for a, b in zip(perm, perm[1:]))
        if ok:
            best = perm
            break
    ranks = [r for r, j in enumerate(best, 1) if positive[j]]
    return ranks


def random_instance(g):
    nq, ng = int(g.integers(1, 9)), int(g.integers(1, 31))
    levels = g.random(4)   # few distinct values -> many ties
    dist = levels[g.integers(0, 4, (nq, ng))]
    qm = meta(g.integers(0, 4, nq), g.integers(0, 3, nq), g.integers(0, 3, nq))
    gm = meta(g.integers(0, 4, ng), g.integers(0, 3, ng), g.integers(0, 3, ng))
    return dist, qm, gm


@pytest.mark.parametrize("accel", [True, False])
@pytest.mark.parametrize("protocol", ["standard", "cloth-changing"])
def test_oracle_equivalence_100_instances(protocol, accel):
    g = np.random.default_rng(2024)
    checked = 0
    for _ in range(100):
        dist, qm, gm = random_instance(g)
        kept, firsts, aps = reference(dist, qm, gm, protocol)
        if not kept:
            with pytest.raises(NoValidPositives):
                cmc_map(dist, qm, gm, protocol, accel=accel)
            continue
        m = cmc_map(dist, qm, gm, protocol, accel=accel)
        assert m.kept.tolist() == kept
        assert m.ap.tolist() == aps
        assert m.mAP == float(np.mean(np.array(aps)))
        for k in range(1, dist.shape[1] + 1):
            assert m.rank(k) == sum(1 for f in firsts if f <= k) / len(kept)
        checked += 1
    assert checked > 50


def test_permutation_scan_agrees_on_tiny_instances():
    g = np.random.default_rng(5)
    for _ in range(40):
        ng = int(g.integers(1, 7))
        dist = g.integers(0, 3, (1, ng)).astype(float)
        valid = g.random((1, ng)) > 0.2
        positive = (g.random((1, ng)) > 0.5) & valid
        first, ap, n_valid = rank_queries(dist, valid, positive)
        if not valid.any():
            assert n_valid[0] == 0 and first[0] == 0
            continue
        ranks = permutation_reference(dist[0], valid[0], positive[0])
        assert first[0] == (ranks[0] if ranks else 0)
        if ranks:
            assert ap[0] == sum(n / float(r) for n, r in enumerate(ranks, 1)) / len(ranks)


def test_hand_example_ap():
    # four valid items, correct ones at ranks 1 and 3
    dist = np.array([[0.1, 0.2, 0.3, 0.4]])
    qm, gm = meta([1], [0], [0]), meta([1, 2, 1, 3], [1, 1, 1, 1], [0, 0, 0, 0])
    m = cmc_map(dist, qm, gm)
    assert abs(m.mAP - (1.0 + 2.0 / 3.0) / 2) < 1e-9
    assert abs(m.mAP - 0.8333333333333334) < 1e-9


def test_hand_example_cmc():
    dist = np.array([[0.1, 0.2, 0.3], [0.1, 0.2, 0.3]])
    qm = meta([1, 2], [0, 0], [0, 0])
    gm = meta([1, 3, 2], [1, 1, 1], [0, 0, 0])
    m = cmc_map(dist, qm, gm)
    assert abs(m.rank(1) - 0.5) < 1e-9 and abs(m.rank(3) - 1.0) < 1e-9 and abs(m.rank(2) - 0.5) < 1e-9


def test_perfect_oracle_features():
    ids = np.array([0, 0, 1, 1, 2, 2])
    qm = meta([0, 1, 2], [0, 0, 0], [0, 0, 0])
    gm = meta(ids, [1] * 6, [1] * 6)
    dist = (qm["identity"][:, None] != ids[None, :]).astype(float)
    m = cmc_map(dist, qm, gm, "cloth-changing")
    assert m.rank(1) == 1.0 and m.mAP == 1.0


def test_ties_break_by_gallery_index():
    dist = np.zeros((1, 3))
    qm = meta([1], [0], [0])
    m = cmc_map(dist, qm, meta([2, 1, 1], [1, 1, 1], [0, 0, 0]))
    assert m.rank(1) == 0.0 and m.rank(2) == 1.0 and m.mAP == (1 / 2 + 2 / 3) / 2


def test_dropped_queries_counted():
    dist = np.zeros((2, 2))
    qm = meta([1, 5], [0, 0], [0, 0])
    m = cmc_map(dist, qm, meta([1, 2], [1, 1], [0, 0]))
    assert m.n_queries == 2 and len(m.kept) == 1 and m.n_dropped == 1


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_metric_ranges(seed):
    g = np.random.default_rng(seed)
    dist, qm, gm = random_instance(g)
    try:
        m = cmc_map(dist, qm, gm, "standard")
    except NoValidPositives:
        return
    assert np.all(np.diff(m.cmc) >= 0) and 0 <= m.cmc[0] and m.cmc[-1] <= 1
    assert 0 <= m.mAP <= 1 and np.all((m.ap > 0) & (m.ap <= 1))


def test_kernel_paths_agree():
    g = np.random.default_rng(3)
    dist = g.integers(0, 5, (20, 60)).astype(float)
    valid = g.random((20, 60)) > 0.2
    positive = (g.random((20, 60)) > 0.8) & valid
    a = rank_queries(dist, valid, positive, accel=True)
    b = rank_queries(dist, valid, positive, accel=False)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))


# ---------------------------------------------------------------- protocols

def test_protocol_examples():
    q = {"identity": 5, "camera": 2, "outfit": 1}
    assert not protocol_filter(q, meta([5], [2], [3]), "standard")[0]
    assert protocol_filter(q, meta([5], [1], [1]), "standard")[0]
    assert not protocol_filter(q, meta([5], [1], [1]), "cloth-changing")[0]
    for p in ("standard", "cloth-changing"):
        assert protocol_filter(q, meta([7], [2], [1]), p)[0]


def test_query_record_itself_excluded():
    q = {"identity": 5, "camera": 2, "outfit": 1, "frame": 3}
    g = meta([5, 5], [2, 2], [1, 1], [3, 4])
    assert protocol_filter(q, g, "standard").tolist() == [False, False]


def test_unknown_protocol():
    with pytest.raises(ValueError):
        protocol_filter({"identity": 1, "camera": 1, "outfit": 1}, meta([1], [1], [1]), "lenient")


def test_euclidean_distance():
    q = np.array([[0.0, 0.0], [1.0, 0.0]])
    g = np.array([[3.0, 4.0]])
    assert np.allclose(euclidean_distance(q, g), [[5.0], [np.sqrt(20.0)]])


# ---------------------------------------------------------------- features and evaluate

def full_model(r_dim=32, scales=3, strip=8, common=16, variant="full"):
    torch.manual_seed(0)
    cfg = tiny_config()
    m = TwoStream(cfg, 4, variant)
    if r_dim != 32 or scales != 3:
        m.reid = ReidNet(4, (8, 8, 16, 16), r_dim, image_size=(64, 32))
        m.gaitnet = GaitNet((4, 8, 8), scales, strip)
        if m.sc is not None:
            m.sc = SCLayers(r_dim, m.gaitnet.feature_dim, common)
    return cfg, m.eval()


@pytest.mark.parametrize("mode,dim", [("r", 32), ("gait-only", 56), ("embedded-sum", 16), ("recon-sum", 56),
                                      ("recon-r", 32), ("concat-rg", 88)])
def test_descriptor_dims_and_norms(tiny_data, mode, dim):
    cfg, model = full_model()
    q = tiny_data.split("query")
    ft = extract_features(q, model, mode, cfg)
    assert ft.features.shape == (len(q), dim)
    assert np.allclose(np.linalg.norm(ft.features, axis=1), 1.0, atol=1e-6)
    assert (ft.gait_calls == 0) == (mode in ("r", "recon-r"))


def test_concat_dim_with_default_sizes(tiny_data):
    cfg, model = full_model(r_dim=256, scales=5, strip=64, common=256)
    ft = extract_features(tiny_data.split("query"), model, "concat-rg", cfg)
    assert ft.features.shape[1] == 256 + 1984 == 2240


def test_mode_r_never_runs_gait_stream(tiny_data):
    cfg, model = full_model()
    ft = extract_features(tiny_data, model, "r", cfg, batch_size=17)
    assert ft.gait_calls == 0


def test_missing_component(tiny_data):
    cfg, model = full_model(variant="baseline")
    with pytest.raises(MissingComponent):
        extract_features(tiny_data.split("query"), model, "embedded-sum", cfg)


def test_gs_concat_duplicates_silhouette(tiny_data):
    cfg, model = full_model(variant="gs-concat")
    assert model.gsp is None
    ft = extract_features(tiny_data.split("query"), model, "gait-only", cfg)
    assert ft.gait_calls == 1


def test_evaluate_reports_and_determinism(tiny_data, tmp_path):
    cfg, model = full_model()
    q, g = tiny_data.split("query"), tiny_data.split("gallery")
    a = evaluate(q, g, model, cfg, "cloth-changing", "r", tmp_path / "e")
    b = evaluate(q, g, model, cfg, "cloth-changing", "r")
    assert a == b
    report = (tmp_path / "e" / "report.txt").read_text()
    for key in ("fingerprint", "protocol", "mode", "rank-1", "rank-5", "rank-10", "rank-20", "mAP"):
        assert key in report
    rows = (tmp_path / "e" / "cmc.csv").read_text().splitlines()
    assert rows[0] == "rank,cmc" and len(rows) == len(g) + 1
    js = json.loads((tmp_path / "e" / "metrics.json").read_text())
    assert js["mAP"] == a.mAP and js["gait_calls"] == 0


def test_untrained_model_near_chance(tiny_data):
    cfg, model = full_model()
    q, g = tiny_data.split("query"), tiny_data.split("gallery")
    m = evaluate(q, g, model, cfg, "standard", "r")
    n_ids = len(np.unique(g.identities))
    # chance rank-1 is 1/4 here; 16 queries give a standard error of about 0.11
    assert abs(m.rank(1) - 1.0 / n_ids) < 0.35


def test_one_outfit_has_no_cloth_changing_positives():
    from gaitreg.data.dataset import generate_synthetic_dataset

    ds = generate_synthetic_dataset(4, 1, 2, 1, 3, 0, height=64, width=32)
    cfg, model = full_model()
    with pytest.raises(NoValidPositives, match="no valid positives under protocol"):
        evaluate(ds.split("query"), ds.split("gallery"), model, cfg, "cloth-changing", "r")


def test_load_models_reads_only_what_mode_needs(tiny_data, tmp_path):
    from gaitreg.trainer import export_states, phase3_weights
    from gaitreg.core.checkpoint import save_checkpoint

    cfg, model = full_model()
    for name, st_ in export_states(model, cfg, {k: k for k in range(4)}, phase3_weights(cfg)).items():
        save_checkpoint(st_, tmp_path / name)
    for comp in ("gsp", "gaitnet"):
        for f in (tmp_path / comp).iterdir():
            f.unlink()
        (tmp_path / comp).rmdir()
    m = load_models(tmp_path, cfg, "r")
    assert m.gsp is None and m.gaitnet is None
    assert load_models(tmp_path, cfg, "recon-r").sc is not None
    with pytest.raises(MissingComponent):
        load_models(tmp_path, cfg, "gait-only")
