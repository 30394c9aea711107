import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from gaitreg.core.config import Config
from gaitreg.gaitnet import GaitNet, n_strips, pairwise_distance, separate_triplet_loss, set_pool
from gaitreg.gsp import GSP, build_gsp, gsp_losses, input_position
from gaitreg.reid import ReidNet, batch_hard_triplet_loss, build_reid, reid_losses
from gaitreg.sc import SCLayers, mmd_loss, mse_align_loss, recon_loss

# 1-D embeddings of two identities used by the hand-worked triplet examples
X = torch.tensor([[0.0], [1.0], [3.0], [5.0]])
Y = torch.tensor([0, 0, 1, 1])


# ---------------------------------------------------------------- gsp

def test_gsp_shapes_and_range():
    torch.manual_seed(0)
    m = GSP(8, (4, 8, 8, 8), 100)
    out = m(torch.rand(3, 64, 64))
    assert out.frames.shape == (3, 8, 64, 64)
    assert out.frames.min() >= 0 and out.frames.max() <= 1
    assert out.position.shape == (3,) and out.latent.shape == (3, 100)
    assert m.aggregator.in_features == 101 and m.aggregator.out_features == 100


def test_gsp_single_mask_and_validation():
    m = GSP(6, (4, 4, 4, 4), 10)
    assert m(torch.zeros(64, 64)).frames.shape == (1, 6, 64, 64)
    with pytest.raises(ValueError, match="64"):
        m(torch.zeros(2, 32, 32))
    with pytest.raises(ValueError, match="non-finite"):
        m(torch.full((1, 64, 64), float("nan")))


def test_gsp_default_architecture():
    m = build_gsp(Config())
    assert m.n_pred == 8 and m.latent_dim == 100
    convs = [l for l in m.encoder[0] if isinstance(l, torch.nn.Conv2d)]
    assert len(convs) == 4 and all(c.kernel_size == (4, 4) and c.stride == (2, 2) for c in convs)
    assert build_gsp(Config(position_policy="arb")).use_position is False


def test_gsp_without_position_skips_aggregator():
    m = GSP(8, (4, 4, 4, 4), 10, use_position=False)
    out = m(torch.rand(2, 64, 64))
    assert out.position is None and torch.equal(out.latent, out.aggregated)
    lp, _ = gsp_losses(out, torch.rand(2, 8, 64, 64))
    assert float(lp) == 0.0


def test_gsp_onehot_position():
    m = GSP(8, (4, 4, 4, 4), 10, onehot=True)
    out = m(torch.rand(2, 64, 64))
    assert out.position_logits.shape == (2, 8) and 0 <= float(out.position.detach().min()) <= 7
    with torch.no_grad():
        lp, _ = gsp_losses(out, torch.rand(2, 8, 64, 64), position_target=4)
        ref = torch.nn.functional.cross_entropy(out.position_logits, torch.tensor([4, 4]))
    assert math.isclose(float(lp), float(ref))


def test_gsp_losses_oracle():
    frames = torch.zeros(1, 4, 64, 64)
    frames[0, 2] = 0.5
    pred = type("P", (), {"frames": frames, "position": torch.tensor([1.0]), "position_logits": None})()
    target = torch.zeros(1, 4, 64, 64)
    lp, lf = gsp_losses(pred, target, "full")
    assert math.isclose(float(lf), 0.25 / 4) and math.isclose(float(lp), 1.0)   # (1 - 4//2)^2
    lp, lw = gsp_losses(pred, torch.ones(1, 64, 64), "weak", position_target=3)
    assert math.isclose(float(lw), 0.5) and math.isclose(float(lp), 4.0)
    with pytest.raises(ValueError, match="does not match"):
        gsp_losses(pred, torch.zeros(1, 3, 64, 64))


def test_input_positions():
    assert input_position("mid", 8, None) == 4
    assert input_position("begin", 8, None) == 0
    assert input_position("end", 8, None) == 7
    g = np.random.default_rng(0)
    assert {input_position("arb", 8, g) for _ in range(200)} == set(range(8))


# ---------------------------------------------------------------- gait network

@pytest.mark.parametrize("S", [1, 2, 3, 4, 5, 6])
def test_strip_count(S):
    assert n_strips(S) == 2 ** S - 1
    net = GaitNet((4, 4, 4), S, 3)
    out = net(torch.rand(2, 3, 64, 64))
    assert out.strips.shape == (2, 2 ** S - 1, 3) and out.flat.shape == (2, (2 ** S - 1) * 3)
    assert net.feature_dim == (2 ** S - 1) * 3


def test_default_gait_dim():
    net = GaitNet()
    assert net.feature_dim == 31 * 64 == 1984


def test_set_pool_permutation_bit_exact():
    g = torch.Generator().manual_seed(0)
    for _ in range(100):
        maps = torch.randn(2, 7, 3, 4, 4, generator=g)
        perm = torch.randperm(7, generator=g)
        assert torch.equal(set_pool(maps), set_pool(maps[:, perm]))
    lst = [torch.randn(3, 4) for _ in range(5)]
    assert torch.equal(set_pool(lst), set_pool(lst[::-1]))
    with pytest.raises(ValueError):
        set_pool([])


def test_gaitnet_frame_order_irrelevant():
    torch.manual_seed(0)
    net = GaitNet((4, 4, 4), 3, 5)
    frames = torch.rand(2, 6, 64, 64)
    assert torch.equal(net(frames).strips, net(frames[:, torch.randperm(6)]).strips)


def test_separate_triplet_oracle():
    # only anchor x=3 with positive x=5 and negative x=1 violates: 0.2 + 2 - 2; 8 valid triples
    loss = separate_triplet_loss(X[:, None, :], Y, 0.2)
    assert math.isclose(float(loss), 0.2 / 8, rel_tol=1e-6)
    # averaged over strips
    # averaged over strips; a collapsed strip contributes exactly the margin
    two = torch.cat([X[:, None], torch.zeros(4, 1, 1)], 1)
    assert math.isclose(float(separate_triplet_loss(two, Y, 0.2)), (0.025 + 0.2) / 2, rel_tol=1e-6)


def test_triplets_need_positive_and_negative():
    with pytest.raises(ValueError):
        separate_triplet_loss(torch.rand(3, 1, 2), torch.tensor([0, 1, 1]))
    with pytest.raises(ValueError):
        batch_hard_triplet_loss(torch.rand(2, 2), torch.tensor([0, 0]))


def test_identical_embeddings_give_margin():
    f = torch.ones(4, 1, 3)
    assert math.isclose(float(separate_triplet_loss(f, Y, 0.2)), 0.2, rel_tol=1e-6)
    assert math.isclose(float(batch_hard_triplet_loss(f[:, 0], Y, 0.3)), 0.3, rel_tol=1e-6)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_pairwise_distance_matches_cdist(seed):
    x = torch.randn(6, 5, generator=torch.Generator().manual_seed(seed), dtype=torch.float64)
    d = pairwise_distance(x)
    ref = torch.cdist(x, x)
    assert torch.allclose(d, ref.clamp_min(1e-6), atol=1e-6) and torch.all(d.diagonal() <= 1e-6)


# ---------------------------------------------------------------- reid

def test_batch_hard_oracle():
    # hardest pairs: anchor x=3 has positive at 2 and negative at 2 -> 0.3; others satisfied
    assert math.isclose(float(batch_hard_triplet_loss(X, Y, 0.3)), 0.3 / 4, rel_tol=1e-6)


def test_reid_losses_and_shapes():
    torch.manual_seed(0)
    net = ReidNet(5, (4, 8), 16, image_size=(32, 16))
    with torch.no_grad():
        r, logits = net(torch.rand(4, 3, 32, 16))
    assert r.shape == (4, 16) and logits.shape == (4, 5)
    labels = torch.tensor([0, 0, 3, 3])
    cla, tri = reid_losses(r, logits, labels)
    assert math.isclose(float(cla), float(torch.nn.functional.cross_entropy(logits, labels)))
    with pytest.raises(ValueError, match="range"):
        reid_losses(r, logits, torch.tensor([0, 0, 5, 5]))
    with pytest.raises(ValueError, match="images"):
        net(torch.rand(2, 3, 64, 32))


def test_silhouette_variant_takes_four_channels():
    net = build_reid(Config(variant="silhouette", image_height=32, image_width=16, reid_channels=(4,)), 3)
    assert net.in_channels == 4 and net(torch.rand(2, 4, 32, 16))[0].shape == (2, 256)


# ---------------------------------------------------------------- semantics consistency

def test_mmd_oracle():
    g_hat = torch.tensor([[0.0, 1.0], [2.0, 1.0]])
    r_hat = torch.tensor([[1.0, 0.0], [1.0, 4.0]])
    # dim 0: means 1 vs 1, variances 1 vs 0 -> 1; dim 1: means 1 vs 2 -> 1, variances 0 vs 4 -> 16
    assert math.isclose(float(mmd_loss(g_hat, r_hat)), 1 + 1 + 16)
    # std variant: dim 0 (1 - 0)^2, dim 1 (0 - 2)^2
    assert math.isclose(float(mmd_loss(g_hat, r_hat, "std")), 1 + 1 + 4)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10 ** 6), st.integers(2, 9))
def test_mmd_properties(seed, n):
    g = torch.Generator().manual_seed(seed)
    a = torch.randn(n, 4, generator=g, dtype=torch.float64)
    b = torch.randn(n, 4, generator=g, dtype=torch.float64)
    assert float(mmd_loss(a, a)) == 0.0
    assert float(mmd_loss(a, b)) >= 0.0
    assert math.isclose(float(mmd_loss(a, b)), float(mmd_loss(b, a)), rel_tol=1e-12)
    # distribution level: row order does not matter
    assert math.isclose(float(mmd_loss(a, b)), float(mmd_loss(a[torch.randperm(n, generator=g)], b)),
                        rel_tol=1e-9, abs_tol=1e-12)


def test_mmd_needs_two_rows():
    with pytest.raises(ValueError):
        mmd_loss(torch.zeros(1, 3), torch.zeros(1, 3))


def test_recon_oracle():
    r, g = torch.zeros(2, 3), torch.zeros(2, 5)
    r_t, g_t = r.clone(), g.clone()
    r_t[0, 0], g_t[1, :] = 2.0, 1.0
    assert math.isclose(float(recon_loss(r_t, r, g_t, g)), (4.0 + 5.0) / 2)
    assert float(recon_loss(r, r, g, g)) == 0.0


def test_sc_layers_dims():
    sc = SCLayers(256, 1984, 256)
    r_hat, g_hat = sc.embed(torch.rand(3, 256), torch.rand(3, 1984))
    assert r_hat.shape == g_hat.shape == (3, 256)
    r_t, g_t = sc.reconstruct(r_hat, g_hat)
    assert r_t.shape == (3, 256) and g_t.shape == (3, 1984)
    with pytest.raises(ValueError):
        sc.embed(torch.rand(3, 10), torch.rand(3, 1984))
    assert math.isclose(float(mse_align_loss(torch.ones(2, 2), torch.zeros(2, 2))), 1.0)


@pytest.mark.parametrize("r_dim,g_dim,common", [(16, 12, 16), (16, 40, 24), (32, 20, 16)])
def test_sc_batch_init(r_dim, g_dim, common):
    torch.manual_seed(0)
    sc = SCLayers(r_dim, g_dim, common)
    r, g = torch.randn(10, r_dim) * 0.3 + 1.0, torch.randn(10, g_dim) * 2.0 - 0.5
    sc.init_from_batch(r, g, torch.Generator().manual_seed(1))
    with torch.no_grad():
        r_hat, g_hat = sc.embed(r, g)
        r_t, g_t = sc.reconstruct(r_hat, g_hat)
    assert float(mmd_loss(g_hat, r_hat)) < 1e-6
    # reconstruction is exact whenever the embedding is injective
    if r_dim <= common:
        assert torch.allclose(r_t, r, atol=1e-4)
    if g_dim <= common:
        assert torch.allclose(g_t, g, atol=1e-4)


def test_sc_batch_init_is_deterministic():
    r, g = torch.randn(8, 16), torch.randn(8, 24)
    a, b = SCLayers(16, 24, 12), SCLayers(16, 24, 12)
    a.init_from_batch(r, g, torch.Generator().manual_seed(3))
    b.init_from_batch(r, g, torch.Generator().manual_seed(3))
    assert all(torch.equal(x, y) for x, y in zip(a.state_dict().values(), b.state_dict().values()))
