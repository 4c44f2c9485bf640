import numpy as np
import pytest
from oracles import central_diff, rel_err

from rrf.network import NetSpec, PackConfig, forward, forward_cached, infer, pack
from rrf.synthetic import blur_plane, make_source
from rrf.training import (
    LossContext,
    RoleData,
    TrainConfig,
    l2_reg,
    loss_and_grad,
    normalize_weights,
    role_data,
    sample_batch,
    sample_positions,
    temporal_diff_reg,
    train_role,
)

SMALL = TrainConfig(patch_size=16, batch_size=8, iterations=40, seed=3)


def blur_data(frames=4, w=64, h=48, seed=0, spec=NetSpec("luma")):
    src = np.stack([f.y for f in make_source(frames, w, h, seed)])
    dec = np.clip(np.rint(np.stack([blur_plane(p, 0.25) for p in src])), 0, 255).astype(np.uint8)
    return role_data([dec], [src], spec), src, dec


# -- sampling ----------------------------------------------------------------

def test_patches_disjoint_within_batch():
    rng = np.random.default_rng(0)
    for _ in range(50):
        pos = sample_positions(3, (50, 70), (16, 16), (2, 2), 12, rng)
        assert np.all(pos[:, 1:] % 2 == 0)
        for i in range(len(pos)):
            for j in range(i + 1, len(pos)):
                a, b = pos[i], pos[j]
                if a[0] != b[0]:
                    continue
                overlap_y = a[1] < b[1] + 16 and b[1] < a[1] + 16
                overlap_x = a[2] < b[2] + 16 and b[2] < a[2] + 16
                assert not (overlap_y and overlap_x)
        assert np.all(pos[:, 1] + 16 <= 50) and np.all(pos[:, 2] + 16 <= 70)


def test_single_patch_geometry_fills_batch():
    pos = sample_positions(1, (48, 48), (48, 48), (1, 1), 64, np.random.default_rng(0))
    assert pos.shape == (64, 3) and not pos.any()


def test_sample_batch_deterministic_and_shaped():
    data, _, _ = blur_data(spec=NetSpec("luma", PackConfig(2, 2)))
    cfg = TrainConfig(patch_size=16, batch_size=5)
    spec = NetSpec("luma", PackConfig(2, 2))
    a = sample_batch(data, spec, cfg, np.random.default_rng(9))
    b = sample_batch(data, spec, cfg, np.random.default_rng(9))
    assert a[0].shape == (5, 4, 8, 8) and a[1].shape == (5, 4, 8, 8)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_patch_clamped_to_small_planes():
    spec = NetSpec("chroma")
    u = np.zeros((1, 10, 12), np.uint8)
    data = role_data([u, u], [u + 1, u + 2], spec)
    x, y = sample_batch(data, spec, TrainConfig(patch_size=48, batch_size=3), np.random.default_rng(0))
    assert x.shape == (3, 2, 10, 12)
    assert np.allclose(y[:, 0], 1 / 255) and np.allclose(y[:, 1], 2 / 255)


def test_role_data_normalization():
    dec = np.full((2, 4, 4), 51, np.uint8)
    src = np.full((2, 4, 4), 61, np.uint8)
    data = role_data([dec], [src], NetSpec("luma"))
    assert np.allclose(data.decoded[0], 0.2)
    assert np.allclose(data.target[0], 10 / 255)
    assert np.isclose(data.l1_norm, 10 / 255)


# -- loss and regularizers ---------------------------------------------------

def test_loss_zero_when_equal(rng):
    p = rng.normal(size=(2, 1, 3, 3))
    loss, g = loss_and_grad(p, p.copy(), LossContext(0.5))
    assert loss == 0 and not g.any()


def test_loss_gradient_direct_substitution():
    # per-element gradient (p - t) / (2 L1), before the batch mean
    p = np.full((1, 1, 1, 1), 2.0)
    loss, g = loss_and_grad(p, np.zeros_like(p), LossContext(1.0))
    assert g[0, 0, 0, 0] * p.size == 1.0
    assert loss == 1.0
    p = np.full((1, 1, 2, 2), 2.0)
    _, g = loss_and_grad(p, np.zeros_like(p), LossContext(1.0))
    assert np.all(g * p.size == 1.0)


def test_loss_gradient_finite_difference(rng):
    p = rng.normal(size=(2, 2, 3, 3))
    t = rng.normal(size=p.shape)
    ctx = LossContext(0.3)
    _, g = loss_and_grad(p, t, ctx)
    for _ in range(10):
        idx = tuple(rng.integers(0, s) for s in p.shape)
        fd = central_diff(lambda: loss_and_grad(p, t, ctx)[0], p, idx)
        assert rel_err(fd, g[idx]) < 1e-3


def test_loss_errors(rng):
    with pytest.raises(ValueError):
        loss_and_grad(np.zeros((1, 1, 2, 2)), np.zeros((1, 1, 2, 3)), LossContext(1.0))
    with pytest.raises(ValueError):
        loss_and_grad(np.zeros((1, 1, 2, 2)), np.zeros((1, 1, 2, 2)), LossContext(0.0))


def test_temporal_reg_cases():
    w = [np.array([[1.0, 2.0]])]
    prev = normalize_weights([np.array([[1.0, 1.0]])])
    value, _ = temporal_diff_reg(w, prev)
    assert value == pytest.approx(0.125, abs=1e-15)
    same, grads = temporal_diff_reg(w, normalize_weights(w))
    assert same == 0 and not grads[0].any()
    with pytest.raises(ValueError):
        temporal_diff_reg(w, [np.ones((1, 3))])


def test_temporal_reg_gradient(rng):
    ws = [rng.normal(size=(4, 3, 1, 1)), rng.normal(size=(3, 1, 3, 3))]
    prev = normalize_weights([rng.normal(size=w.shape) for w in ws])
    _, grads = temporal_diff_reg(ws, prev)
    for w, g in zip(ws, grads):
        for _ in range(15):
            idx = tuple(rng.integers(0, s) for s in w.shape)
            fd = central_diff(lambda: temporal_diff_reg(ws, prev)[0], w, idx, h=1e-6)
            assert rel_err(fd, g[idx]) < 1e-3


def test_l2_reg_cases(rng):
    assert l2_reg([np.zeros((2, 2))], 0.5)[0] == 0
    assert l2_reg([np.array([2.0])], 0.5)[0] == 2.0
    ws = [rng.normal(size=(3, 2))]
    _, grads = l2_reg(ws, 0.1)
    for _ in range(5):
        idx = tuple(rng.integers(0, s) for s in ws[0].shape)
        fd = central_diff(lambda: l2_reg(ws, 0.1)[0], ws[0], idx)
        assert rel_err(fd, grads[0][idx]) < 1e-3


# -- training loop -----------------------------------------------------------

def test_zero_residual_skips():
    dec = np.full((2, 16, 16), 80, np.uint8)
    out = train_role(role_data([dec], [dec], NetSpec("luma")), NetSpec("luma"), SMALL)
    assert out.skipped and out.net is None


def test_training_deterministic():
    data, _, _ = blur_data()
    a = train_role(data, NetSpec("luma"), SMALL)
    b = train_role(data, NetSpec("luma"), SMALL)
    assert a.loss_trace == b.loss_trace
    for p, q in zip(a.net.trainables(), b.net.trainables()):
        assert np.array_equal(p, q)
    assert all(np.isfinite(a.loss_trace))


def test_warm_start_first_loss_matches_prev():
    spec = NetSpec("luma")
    data, _, _ = blur_data()
    prev = train_role(data, spec, SMALL).net
    cfg = TrainConfig(patch_size=16, batch_size=8, iterations=1, reg_mode="none", seed=11)
    out = train_role(data, spec, cfg, prev=prev)
    x, y = sample_batch(data, spec, cfg, np.random.default_rng(np.random.SeedSequence(11).spawn(2)[1]))
    pred, _, _ = forward_cached(prev, x, "train")
    expected, _ = loss_and_grad(pred, y, LossContext(data.l1_norm))
    assert out.loss_trace[0] == pytest.approx(expected, rel=1e-6)


def test_fallback_on_nonfinite_loss():
    data, _, _ = blur_data()
    bad = RoleData(data.decoded, [np.full_like(data.target[0], np.inf)], data.shape)
    out = train_role(bad, NetSpec("luma"), TrainConfig(patch_size=16, batch_size=8, iterations=5))
    assert out.fallback and out.net is None


def test_spec_mismatch_rejected():
    data, _, _ = blur_data()
    prev = train_role(data, NetSpec("luma"), SMALL).net
    with pytest.raises(ValueError):
        train_role(data, NetSpec("luma", width=6), SMALL, prev=prev)


@pytest.mark.slow
def test_blur_residual_halves_mse():
    spec = NetSpec("luma")
    data, src, dec = blur_data(frames=4, w=96, h=96, seed=2)
    cfg = TrainConfig(patch_size=48, batch_size=16, iterations=1000, seed=0)
    net = train_role(data, spec, cfg).net
    x = pack(dec.astype(np.float64) / 255, spec.pack)
    pred = infer(net, x)[:, 0] * 255
    target = src.astype(np.float64) - dec
    base = np.mean(target ** 2)
    assert np.mean((target - pred) ** 2) <= 0.5 * base


@pytest.mark.slow
def test_temporal_reg_keeps_weights_closer():
    spec = NetSpec("luma", width=6)
    wins = 0
    for seed in range(5):
        first, _, _ = blur_data(frames=2, w=48, h=48, seed=seed)
        second, _, _ = blur_data(frames=2, w=48, h=48, seed=seed + 100)
        prev = train_role(first, spec, TrainConfig(patch_size=24, batch_size=8, iterations=60,
                                                   seed=seed)).net
        ref = normalize_weights([p.weight for p in prev.layers])

        def dist(reg_weight):
            cfg = TrainConfig(patch_size=24, batch_size=8, iterations=60, reg_mode="temporal",
                              reg_weight=reg_weight, seed=seed + 7)
            net = train_role(second, spec, cfg, prev=prev).net
            cur = normalize_weights([p.weight for p in net.layers])
            return sum(float(((a - b) ** 2).sum()) for a, b in zip(cur, ref))

        wins += dist(0.1) < dist(0.0)
    assert wins == 5


def test_forward_matches_infer_interior(rng):
    data, _, dec = blur_data()
    net = train_role(data, NetSpec("luma"), SMALL).net
    x = pack(dec[:1].astype(np.float64) / 255, PackConfig())
    a = infer(net, x)
    b = forward(net, x)
    assert np.allclose(a[..., :-3, :-3], b[..., :-3, :-3], atol=1e-5)
