from fractions import Fraction

import numpy as np
import pytest
from conftest import random_bn_net, small_specs
from oracles import central_diff, mac_table_cell, rel_err

from rrf.network import (
    NetSpec,
    PackConfig,
    backward,
    build_net,
    float_param_bytes,
    fold_bn,
    forward,
    forward_cached,
    infer,
    mac_per_pixel,
    mac_per_pixel_layers,
    pack,
    pack_role,
    prune_constant_channels,
    unpack,
    unpack_role,
)
from rrf.ops import BnState, LayerParams

PACKS = [PackConfig(a, b) for a in (1, 2) for b in (1, 2)]

# Complexity and parameter tables of the reference architecture (width 12).
MAC_TABLE = {
    ("luma", "1x1"): 384, ("luma", "1x2"): 204, ("luma", "2x1"): 204, ("luma", "2x2"): 114,
    ("chroma", "1x1"): 102, ("chroma", "1x2"): 57, ("chroma", "2x1"): 57, ("chroma", "2x2"): 34.5,
}
WEIGHT_TABLE = {
    ("luma", "1x1"): 384, ("luma", "1x2"): 408, ("luma", "2x1"): 408, ("luma", "2x2"): 456,
    ("chroma", "1x1"): 408, ("chroma", "1x2"): 456, ("chroma", "2x1"): 456, ("chroma", "2x2"): 552,
}


# -- packing -----------------------------------------------------------------

def test_pack_identity_layout(rng):
    x = rng.normal(size=(6, 8))
    t = pack(x, PackConfig(1, 1))
    assert t.shape == (1, 1, 6, 8) and np.array_equal(t[0, 0], x)


def test_pack_2x2_channel_order():
    x = np.array([[1.0, 2.0], [3.0, 4.0]])
    t = pack(x, PackConfig(2, 2))
    assert t.shape == (1, 4, 1, 1)
    assert t.ravel().tolist() == [1.0, 2.0, 3.0, 4.0]
    assert np.array_equal(unpack(t, PackConfig(2, 2))[0], x)


@pytest.mark.parametrize("cfg", PACKS, ids=str)
def test_pack_roundtrip(rng, cfg):
    x = rng.normal(size=(3, 8, 12))
    t = pack(x, cfg)
    assert t.shape == (3, cfg.size, 8 // cfg.ph, 12 // cfg.pw)
    assert np.array_equal(unpack(t, cfg), x)


def test_pack_errors(rng):
    with pytest.raises(ValueError):
        pack(rng.normal(size=(3, 4)), PackConfig(2, 2))
    with pytest.raises(ValueError):
        unpack(rng.normal(size=(1, 3, 2, 2)), PackConfig(2, 2))
    with pytest.raises(ValueError):
        PackConfig(3, 1)
    assert PackConfig.parse("2/1") == PackConfig(2, 1) == PackConfig.parse("2x1")


def test_pack_role_pads_and_crops(rng):
    cfg = PackConfig(2, 2)
    u = rng.normal(size=(2, 5, 7))
    v = rng.normal(size=(2, 5, 7))
    t = pack_role([u, v], cfg)
    assert t.shape == (2, 8, 3, 4)
    bu, bv = unpack_role(t, cfg, 2, (5, 7))
    assert np.array_equal(bu, u) and np.array_equal(bv, v)


# -- construction and tables -------------------------------------------------

@pytest.mark.parametrize("key", sorted(WEIGHT_TABLE))
def test_parameter_counts(key):
    role, p = key
    net = build_net(NetSpec(role, PackConfig.parse(p)), 0)
    assert net.n_weights == WEIGHT_TABLE[key]
    assert net.n_biases == 48


@pytest.mark.parametrize("key", sorted(MAC_TABLE))
def test_mac_table(key):
    role, p = key
    spec = NetSpec(role, PackConfig.parse(p))
    assert sum(mac_per_pixel_layers(spec)) == Fraction(MAC_TABLE[key])
    assert mac_per_pixel(spec) == MAC_TABLE[key]


def test_mac_layers_match_loop_oracle():
    spec = NetSpec("luma", PackConfig(1, 1))
    assert mac_per_pixel_layers(spec) == [12, 108, 144, 108, 12]
    spec = NetSpec("chroma", PackConfig(2, 2))
    assert mac_per_pixel_layers(spec) == [6, Fraction(27, 4), 9, Fraction(27, 4), 6]
    for spec in small_specs():
        per_site = spec.pack.size * (4 if spec.role == "chroma" else 1)
        ref = [mac_table_cell(k, s[0], s[1] if k == "pointwise" else s[0], per_site)
               for k, s, _, _ in spec.layer_shapes()]
        assert mac_per_pixel_layers(spec) == ref


def test_raw_float_sizes():
    assert len(float_param_bytes(build_net(NetSpec("luma"), 0))) == 1728
    assert len(float_param_bytes(build_net(NetSpec("chroma"), 0))) == 1824


def test_build_net_deterministic_and_zero_bias():
    a = build_net(NetSpec("chroma", PackConfig(2, 1)), 5)
    b = build_net(NetSpec("chroma", PackConfig(2, 1)), 5)
    for p, q in zip(a.layers, b.layers):
        assert np.array_equal(p.weight, q.weight)
        if p.bias is not None:
            assert not p.bias.any()
    assert a.layers[-1].bias is None
    assert a.spec.in_channels == 4 and a.layers[-1].weight.shape[0] == 4


# -- forward -----------------------------------------------------------------

def test_zero_last_layer_gives_zero_output(rng):
    net = random_bn_net(NetSpec("luma"), rng)
    net.layers[-1].weight[:] = 0
    assert not forward(net, rng.uniform(0, 1, (2, 1, 6, 6))).any()
    assert not forward(net, rng.uniform(0, 1, (2, 1, 6, 6)), "train").any()


def test_chroma_shape(rng):
    net = random_bn_net(NetSpec("chroma", PackConfig(2, 2)), rng)
    assert forward(net, rng.normal(size=(1, 8, 4, 5))).shape == (1, 8, 4, 5)
    with pytest.raises(ValueError):
        forward(net, rng.normal(size=(1, 4, 4, 5)))


def test_train_eval_agree_with_pinned_statistics(rng):
    # one 1x1 input channel broadcasts; pin BN stats to each batch's own stats
    net = random_bn_net(NetSpec("luma", width=3), rng)
    x = rng.normal(size=(4, 1, 6, 6))
    out_t, cache, _ = forward_cached(net, x, "train")
    pinned = net.copy()
    for i, e in enumerate(cache.acts):
        if "bn" in e:
            mu = e["in"].mean(axis=(0, 2, 3))
            var = e["in"].var(axis=(0, 2, 3))
            pinned.bn[i] = BnState(mu, var, eps=net.bn[i].eps)
    xp = np.pad(x, ((0, 0), (0, 0), (0, 2), (0, 2)))
    out_e = forward(pinned, xp, "eval")[:, :, :6, :6]
    assert np.max(np.abs(out_t - out_e)) < 1e-10


def test_network_gradient_end_to_end(rng):
    # smaller step than the per-op checks: ReLU kinks and batch statistics
    # make the composed net curved on the 1e-3 scale
    for phase in ("train", "eval"):
        net = random_bn_net(NetSpec("luma", PackConfig(1, 2), width=3), rng)
        x = rng.normal(size=(2, 2, 4, 3))
        r = rng.normal(size=x.shape)

        def loss():
            return float((forward(net, x, phase) * r).sum())

        out, cache, _ = forward_cached(net, x, phase)
        grads = backward(net, cache, r)
        worst = 0.0
        for arr, g in zip(net.trainables(), grads):
            for _ in range(4):
                idx = tuple(rng.integers(0, s) for s in arr.shape)
                worst = max(worst, rel_err(central_diff(loss, arr, idx, h=1e-5), g[idx]))
        assert worst < 1e-3, phase


def test_infer_crops_the_padded_border(rng):
    net = random_bn_net(NetSpec("luma", width=4), rng)
    x = rng.uniform(0, 1, (1, 1, 7, 9))
    xp = np.pad(x, ((0, 0), (0, 0), (0, 2), (0, 2)))
    assert np.array_equal(infer(net, x), forward(net, xp)[:, :, :7, :9])


# -- folding -----------------------------------------------------------------

def test_fold_identity_stats(rng):
    net = random_bn_net(NetSpec("luma", width=3), rng)
    for s in net.bn:
        if s is not None:
            s.running_mean[:] = 0
            s.running_var[:] = 1
            s.eps = 0.0
    f = fold_bn(net)
    for p, q in zip(net.layers, f.layers):
        assert np.allclose(p.weight, q.weight)


def test_fold_scalar_case():
    spec = NetSpec("luma", width=1)
    net = build_net(spec, 0, dtype=np.float64)
    net.layers[2] = LayerParams("pointwise", np.full((1, 1, 1, 1), 3.0), np.array([1.0]))
    net.bn[2] = BnState(np.array([2.0]), np.array([1.0]), eps=0.0)
    f = fold_bn(net)
    assert f.layers[2].weight.ravel().tolist() == [3.0]
    assert f.layers[2].bias.tolist() == [-5.0]
    assert f.folded and all(p.bias is not None for p in f.layers)


@pytest.mark.parametrize("spec", small_specs(), ids=lambda s: f"{s.role}-{s.pack}-{s.width}")
def test_fold_equivalence(rng, spec):
    net = random_bn_net(spec, rng)
    x = rng.uniform(-255, 255, (2, spec.in_channels, 5, 6))
    gap = np.max(np.abs(forward(fold_bn(net), x) - forward(net, x)))
    assert gap < 1e-5


def test_fold_missing_stats(rng):
    net = random_bn_net(NetSpec("luma", width=3), rng)
    net.bn[1].running_var = None
    with pytest.raises(RuntimeError):
        fold_bn(net)


def test_prune_constant_channels_is_lossless(rng):
    net = random_bn_net(NetSpec("luma", width=4), rng)
    x = rng.uniform(0, 1, (2, 1, 6, 6))
    # make hidden channel 1 dead after layer 1, with matching statistics
    net.layers[0].weight[1] = 0
    net.layers[0].bias[1] = -1.0
    net.bn[1].running_mean[1] = 0.0
    net.bn[1].running_var[1] = 0.0
    pruned = prune_constant_channels(net)
    assert not pruned.layers[1].weight[1].any()
    assert net.layers[1].weight[1].any()
    assert np.max(np.abs(forward(fold_bn(pruned), x) - forward(net, x))) < 1e-9
    assert np.abs(fold_bn(pruned).layers[1].weight).max() < 1e2
