"""The fixed five-layer depthwise-separable residual predictor.

Layer stack (BN precedes layers 2-5, ReLU follows layers 1-4)::

    pointwise(C_in -> width) -> depthwise 3x3 -> pointwise(width -> width)
    -> depthwise 3x3 -> pointwise(width -> C_in, no bias)

Depthwise layers behind a BN pad their normalized input with the value a raw
zero maps to, i.e. the border is zero in the *un-normalized* domain. That is
what a plain zero-padded convolution computes after BN folding, so folded and
unfolded evaluation agree exactly, borders included.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import numpy as np

from .ops import (
    BnState,
    LayerParams,
    bn_bwd_eval,
    bn_bwd_train,
    bn_fwd_eval,
    bn_shift,
    bn_train,
    conv_depthwise3x3_bwd,
    conv_depthwise3x3_fwd,
    conv_pointwise_bwd,
    conv_pointwise_fwd,
    relu_bwd,
    relu_fwd,
)

ROLES = ("luma", "chroma")
LAYER_KINDS = ("pointwise", "depthwise", "pointwise", "depthwise", "pointwise")
TRAIN_PAD = 2


@dataclass(frozen=True)
class PackConfig:
    ph: int = 1
    pw: int = 1

    def __post_init__(self):
        if self.ph not in (1, 2) or self.pw not in (1, 2):
            raise ValueError(f"patch dims must be 1 or 2, got {self.ph}x{self.pw}")

    @property
    def size(self) -> int:
        return self.ph * self.pw

    @classmethod
    def parse(cls, text: str) -> "PackConfig":
        """Accept ``"2x2"``, ``"2/2"`` or ``"1x2"`` style strings."""
        for sep in ("x", "/", "X"):
            if sep in text:
                a, b = text.split(sep)
                return cls(int(a), int(b))
        raise ValueError(f"cannot parse pack config {text!r}")

    def __str__(self):
        return f"{self.ph}x{self.pw}"


@dataclass(frozen=True)
class NetSpec:
    role: str = "luma"
    pack: PackConfig = PackConfig()
    width: int = 12

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"role must be one of {ROLES}, got {self.role!r}")
        if self.width < 1:
            raise ValueError("width must be >= 1")

    @property
    def in_channels(self) -> int:
        return self.pack.size * (2 if self.role == "chroma" else 1)

    def layer_shapes(self) -> list[tuple]:
        """``(kind, weight_shape, has_bias, has_bn)`` per layer."""
        c, w = self.in_channels, self.width
        return [
            ("pointwise", (w, c, 1, 1), True, False),
            ("depthwise", (w, 1, 3, 3), True, True),
            ("pointwise", (w, w, 1, 1), True, True),
            ("depthwise", (w, 1, 3, 3), True, True),
            ("pointwise", (c, w, 1, 1), False, True),
        ]


@dataclass
class NetParams:
    spec: NetSpec
    layers: list[LayerParams]
    bn: list[Optional[BnState]] = field(default_factory=list)

    @property
    def folded(self) -> bool:
        return all(s is None for s in self.bn)

    def copy(self) -> "NetParams":
        return NetParams(
            self.spec,
            [p.copy() for p in self.layers],
            [None if s is None else s.copy() for s in self.bn],
        )

    @property
    def n_weights(self) -> int:
        return sum(p.weight.size for p in self.layers)

    @property
    def n_biases(self) -> int:
        return sum(p.bias.size for p in self.layers if p.bias is not None)

    def trainables(self) -> list[np.ndarray]:
        out = []
        for p in self.layers:
            out.append(p.weight)
            if p.bias is not None:
                out.append(p.bias)
        return out

    def set_trainables(self, arrays: list[np.ndarray]) -> None:
        it = iter(arrays)
        for p in self.layers:
            p.weight = next(it)
            if p.bias is not None:
                p.bias = next(it)

    def astype(self, dtype) -> "NetParams":
        net = self.copy()
        for p in net.layers:
            p.weight = p.weight.astype(dtype)
            if p.bias is not None:
                p.bias = p.bias.astype(dtype)
        return net


# -- packing -----------------------------------------------------------------

def pack(plane: np.ndarray, cfg: PackConfig) -> np.ndarray:
    """Space-to-depth: ``(H, W)`` or ``(N, H, W)`` -> ``(N, ph*pw, H/ph, W/pw)``.

    Channel index is the row-major position inside the patch.
    """
    x = np.asarray(plane)
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3:
        raise ValueError(f"expected a plane or a stack of planes, got shape {x.shape}")
    n, h, w = x.shape
    if h % cfg.ph or w % cfg.pw:
        raise ValueError(f"plane {h}x{w} is not divisible by pack {cfg}")
    t = x.reshape(n, h // cfg.ph, cfg.ph, w // cfg.pw, cfg.pw)
    return np.ascontiguousarray(t.transpose(0, 2, 4, 1, 3).reshape(n, cfg.size, h // cfg.ph, w // cfg.pw))


def unpack(t: np.ndarray, cfg: PackConfig) -> np.ndarray:
    """Inverse of :func:`pack`; returns ``(N, H, W)``."""
    if t.ndim != 4:
        raise ValueError("expected an NCHW tensor")
    n, c, hs, ws = t.shape
    if c != cfg.size:
        raise ValueError(f"tensor has {c} channels, pack {cfg} needs {cfg.size}")
    x = t.reshape(n, cfg.ph, cfg.pw, hs, ws).transpose(0, 3, 1, 4, 2)
    return np.ascontiguousarray(x.reshape(n, hs * cfg.ph, ws * cfg.pw))


def pad_to_multiple(planes: np.ndarray, cfg: PackConfig) -> np.ndarray:
    """Edge-replicate the bottom/right border up to multiples of the patch dims."""
    h, w = planes.shape[-2:]
    dh, dw = (-h) % cfg.ph, (-w) % cfg.pw
    if not dh and not dw:
        return planes
    pad = [(0, 0)] * (planes.ndim - 2) + [(0, dh), (0, dw)]
    return np.pad(planes, pad, mode="edge")


def pack_role(planes: list[np.ndarray], cfg: PackConfig) -> np.ndarray:
    """Pack one plane stack (luma) or a U/V pair (chroma) into network input."""
    return np.concatenate([pack(pad_to_multiple(p, cfg), cfg) for p in planes], axis=1)


def unpack_role(t: np.ndarray, cfg: PackConfig, n_planes: int, shape: tuple) -> list[np.ndarray]:
    h, w = shape
    parts = np.split(t, n_planes, axis=1)
    return [unpack(p, cfg)[:, :h, :w] for p in parts]


# -- construction ------------------------------------------------------------

def build_net(spec: NetSpec, rng=None, dtype=np.float32) -> NetParams:
    """Fresh network: uniform(+-1/sqrt(fan_in)) weights, zero biases."""
    rng = np.random.default_rng(rng)
    layers, bn = [], []
    for kind, shape, has_bias, has_bn in spec.layer_shapes():
        fan_in = shape[1] * shape[2] * shape[3]
        bound = 1.0 / np.sqrt(fan_in)
        weight = rng.uniform(-bound, bound, size=shape).astype(dtype)
        bias = np.zeros(shape[0], dtype) if has_bias else None
        layers.append(LayerParams(kind, weight, bias))
        bn.append(BnState.fresh(shape[0] if kind == "depthwise" else shape[1], dtype) if has_bn else None)
    return NetParams(spec, layers, bn)


def float_param_bytes(net: NetParams) -> bytes:
    """Trainable weights and biases as little-endian float32, layer order."""
    return b"".join(a.astype("<f4").tobytes() for a in net.trainables())


# -- forward / backward ------------------------------------------------------

@dataclass
class _Cache:
    acts: list = field(default_factory=list)
    train: bool = False
    pad: tuple = (0, 0)


def _check_input(net: NetParams, x: np.ndarray):
    if x.ndim != 4 or x.shape[1] != net.spec.in_channels:
        raise ValueError(
            f"{net.spec.role} net expects (N, {net.spec.in_channels}, H, W), got {x.shape}"
        )


def forward_cached(net: NetParams, x: np.ndarray, phase: str = "eval"):
    """Run the network, returning ``(out, cache, new_bn_states)``.

    In ``train`` phase the input is zero padded by two rows (bottom) and two
    columns (right), BN uses batch statistics, and the output is cropped
    back to the input size.
    """
    _check_input(net, x)
    train = phase == "train"
    if phase not in ("train", "eval"):
        raise ValueError(f"phase must be 'train' or 'eval', got {phase!r}")
    if train and net.folded:
        raise ValueError("a folded network has no BN to train")
    n, c, h, w = x.shape
    if train:
        x = np.pad(x, ((0, 0), (0, 0), (0, TRAIN_PAD), (0, TRAIN_PAD)))
    cache = _Cache(train=train, pad=(h, w))
    new_bn = list(net.bn)
    a = x
    last = len(net.layers) - 1
    for i, p in enumerate(net.layers):
        entry = {"in": a}
        s = net.bn[i]
        shift = None
        if s is not None:
            if train:
                a, new_bn[i], bc = bn_train(a, s)
                entry["bn"] = bc
                shift = bn_shift(bc.mean, bc.inv_std)
            else:
                a = bn_fwd_eval(a, s)
                shift = bn_shift(s.running_mean.astype(np.float64),
                                 1.0 / np.sqrt(s.running_var.astype(np.float64) + s.eps))
            entry["bn_out"] = a
        if p.kind == "pointwise":
            z = conv_pointwise_fwd(a, p)
        else:
            z = conv_depthwise3x3_fwd(a, p, pad_value=shift)
        entry["shift"] = shift
        if i < last:
            z = relu_fwd(z, inplace=True)
        entry["out"] = z
        cache.acts.append(entry)
        a = z
    if train:
        a = a[:, :, :h, :w]
    return a, cache, new_bn


def forward(net: NetParams, x: np.ndarray, phase: str = "eval") -> np.ndarray:
    out, _, _ = forward_cached(net, x, phase)
    return np.ascontiguousarray(out)


def infer(net: NetParams, x: np.ndarray) -> np.ndarray:
    """Eval-phase forward with the training border: zero pad bottom/right, then crop.

    Training always sees ``TRAIN_PAD`` zero rows and columns after each
    patch, so the decoder reproduces that border at the bottom and right
    frame edges instead of letting the network extrapolate there.
    """
    _check_input(net, x)
    h, w = x.shape[2:]
    xp = np.pad(x, ((0, 0), (0, 0), (0, TRAIN_PAD), (0, TRAIN_PAD)))
    return np.ascontiguousarray(forward(net, xp, "eval")[:, :, :h, :w])


def backward(net: NetParams, cache: _Cache, grad_out: np.ndarray) -> list[np.ndarray]:
    """Gradients w.r.t. ``net.trainables()`` (same order)."""
    g = grad_out
    if cache.train:
        full = cache.acts[-1]["out"]
        gp = np.zeros_like(full)
        gp[:, :, :g.shape[2], :g.shape[3]] = g
        g = gp
    grads: list = [None] * len(net.layers)
    last = len(net.layers) - 1
    for i in range(last, -1, -1):
        p = net.layers[i]
        entry = cache.acts[i]
        if i < last:
            g = relu_bwd(entry["out"], g)
        conv_in = entry.get("bn_out", entry["in"])
        gshift = None
        if p.kind == "pointwise":
            g, gw, gb = conv_pointwise_bwd(conv_in, p, g)
        else:
            g, gw, gb, gshift = conv_depthwise3x3_bwd(conv_in, p, g, pad_value=entry["shift"])
        grads[i] = (gw, gb)
        s = net.bn[i]
        if s is not None:
            if cache.train:
                g = bn_bwd_train(g, entry["bn"], grad_shift=gshift)
            else:
                # eval-mode shift is a constant
                g = bn_bwd_eval(g, s)
    flat = []
    for gw, gb in grads:
        flat.append(gw)
        if gb is not None:
            flat.append(gb)
    return flat


# -- folding -----------------------------------------------------------------

CONSTANT_VAR = 1e-10


def prune_constant_channels(net: NetParams, tol: float = CONSTANT_VAR) -> NetParams:
    """Zero the weights that read BN channels with (near) zero running variance.

    Such a channel (typically a dead ReLU) normalizes to 0 on the data the
    statistics came from, so its weights never contributed. Left in place they
    are scaled by ``1/sqrt(eps)`` on folding and swamp the quantization range
    of every filter that reads them.
    """
    net = net.copy()
    for p, s in zip(net.layers, net.bn):
        if s is None:
            continue
        dead = np.asarray(s.running_var) <= tol
        if not dead.any():
            continue
        if p.kind == "pointwise":
            p.weight[:, dead] = 0
        else:
            p.weight[dead] = 0
    return net


def fold_bn(net: NetParams) -> NetParams:
    """Absorb every BN into the following convolution.

    The result has no BN and a bias on every layer, including the last:
    ``b' = b - sum_{c,k} mean_c * w'_{c,k}`` is generally non-zero there.
    """
    if net.folded:
        return net.copy()
    layers = []
    for p, s in zip(net.layers, net.bn):
        w = p.weight.astype(np.float64)
        b = np.zeros(w.shape[0]) if p.bias is None else p.bias.astype(np.float64)
        if s is None:
            layers.append(LayerParams(p.kind, w, b))
            continue
        if s.running_mean is None or s.running_var is None:
            raise RuntimeError("BN running statistics are missing")
        mu = s.running_mean.astype(np.float64)
        r = 1.0 / np.sqrt(s.running_var.astype(np.float64) + s.eps)
        if p.kind == "pointwise":
            wf = w * r[None, :, None, None]
            bf = b - np.einsum("fc,c->f", wf[:, :, 0, 0], mu)
        else:
            wf = w * r[:, None, None, None]
            bf = b - mu * wf.sum(axis=(1, 2, 3))
        layers.append(LayerParams(p.kind, wf, bf))
    return NetParams(net.spec, layers, [None] * len(layers))


# -- complexity --------------------------------------------------------------

def mac_per_pixel_layers(spec: NetSpec) -> list[Fraction]:
    """Multiply-accumulates per source-resolution pixel for each layer."""
    pixels_per_site = spec.pack.size * (4 if spec.role == "chroma" else 1)
    out = []
    for kind, shape, _, _ in spec.layer_shapes():
        if kind == "pointwise":
            macs = shape[0] * shape[1]
        else:
            macs = shape[0] * shape[2] * shape[3]
        out.append(Fraction(macs, pixels_per_site))
    return out


def mac_per_pixel(spec: NetSpec) -> float:
    return float(sum(mac_per_pixel_layers(spec)))
