import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from rrf.network import NetSpec, PackConfig, build_net  # noqa: E402
from rrf.yuv import YuvFrame  # noqa: E402

GOLDEN = Path(__file__).parent / "golden"

# (criterion, line) pairs filled by test_acceptance.py
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(ACCEPTANCE):
        terminalreporter.write_line(line)


def random_frames(n, w, h, seed=0):
    rng = np.random.default_rng(seed)
    return [YuvFrame(rng.integers(0, 256, (h, w), dtype=np.uint8),
                     rng.integers(0, 256, (h // 2, w // 2), dtype=np.uint8),
                     rng.integers(0, 256, (h // 2, w // 2), dtype=np.uint8), i)
            for i in range(n)]


def random_bn_net(spec, rng, dtype=np.float64):
    """Fresh net with random biases and populated BN statistics."""
    net = build_net(spec, rng, dtype=dtype)
    for p in net.layers:
        if p.bias is not None:
            p.bias[:] = rng.normal(0, 0.3, p.bias.shape)
    for s in net.bn:
        if s is not None:
            s.running_mean = rng.normal(0, 1, s.running_mean.shape).astype(dtype)
            s.running_var = rng.uniform(0.2, 3, s.running_var.shape).astype(dtype)
    return net


def small_specs():
    return [NetSpec(role, PackConfig(ph, pw), width)
            for role in ("luma", "chroma") for ph in (1, 2) for pw in (1, 2) for width in (3, 12)]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_quantnet(rng, spec=None, b_w=None, b_b=None, zero_frac=0.1):
    """Arbitrary valid QuantNet: random ints in range, random scales, some zero groups."""
    from rrf.codec import QuantLayer, QuantNet, qmax

    if spec is None:
        spec = small_specs()[int(rng.integers(0, len(small_specs())))]
    b_w = int(rng.integers(2, 17)) if b_w is None else b_w
    b_b = int(rng.integers(2, 17)) if b_b is None else b_b

    def scale():
        if rng.random() < zero_frac:
            return 0, 0
        return int(rng.integers(1 << 15, 1 << 16)), int(rng.integers(-128, 128))

    layers = []
    for kind, shape, _, _ in spec.layer_shapes():
        g = shape[0]
        lw, lb = qmax(b_w), qmax(b_b)
        wq = rng.integers(-lw, lw + 1, shape).astype(np.int32)
        sig = np.zeros(g, np.int64)
        exp = np.zeros(g, np.int64)
        for i in range(g):
            sig[i], exp[i] = scale()
            if sig[i] == 0:
                wq[i] = 0
        bs, be = scale()
        bq = np.zeros(g, np.int32) if bs == 0 else rng.integers(-lb, lb + 1, g).astype(np.int32)
        layers.append(QuantLayer(kind, wq, sig, exp, bq, bs, be))
    return QuantNet(spec, layers, b_w, b_b).validate()


def perturb_quantnet(q, rng, p=0.2):
    """Copy of ``q`` with a fraction of integers and scales nudged, staying valid."""
    from rrf.codec import QuantLayer, QuantNet, qmax

    lw, lb = qmax(q.b_w), qmax(q.b_b)
    layers = []
    for ql in q.layers:
        wq = ql.wq.copy()
        mask = rng.random(wq.shape) < p
        wq = np.clip(wq + mask * rng.integers(-3, 4, wq.shape), -lw, lw).astype(np.int32)
        bq = np.clip(ql.bq + (rng.random(ql.bq.shape) < p) * rng.integers(-3, 4, ql.bq.shape),
                     -lb, lb).astype(np.int32)
        sig = ql.w_sig.copy()
        exp = ql.w_exp.copy()
        for i in range(len(sig)):
            if rng.random() < p:
                sig[i] = int(rng.integers(1 << 15, 1 << 16))
                exp[i] = int(np.clip(exp[i] + rng.integers(-2, 3), -128, 127))
        layers.append(QuantLayer(ql.kind, wq, sig, exp, bq, ql.b_sig, ql.b_exp))
    return QuantNet(q.spec, layers, q.b_w, q.b_b).validate()
