"""Dense NCHW layer ops with hand-written backward passes, plus Adam.

Only what the refinement network needs: pointwise (1x1) and depthwise 3x3
convolutions, batch normalization without affine parameters, ReLU.
All functions are dtype-preserving; training runs in float32, gradient
checks in float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from ._kernels import (
    bn_grad_apply,
    bn_grad_sums,
    bn_normalize,
    channel_mean_var,
    dw3x3_same,
    dw3x3_wgrad,
    relu_mask_grad,
)

BN_MOMENTUM = 0.3
BN_EPS = 1e-5


@dataclass
class LayerParams:
    """Weights ``(F, C, 1, 1)`` for pointwise or ``(C, 1, 3, 3)`` for depthwise."""

    kind: str
    weight: np.ndarray
    bias: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind == "pointwise":
            if self.weight.ndim != 4 or self.weight.shape[2:] != (1, 1):
                raise ValueError(f"pointwise weight must be (F, C, 1, 1), got {self.weight.shape}")
        elif self.kind == "depthwise":
            if self.weight.ndim != 4 or self.weight.shape[1:] != (1, 3, 3):
                raise ValueError(f"depthwise weight must be (C, 1, 3, 3), got {self.weight.shape}")
        else:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.bias is not None and self.bias.shape != (self.weight.shape[0],):
            raise ValueError("bias length must equal the number of filters")

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1] if self.kind == "pointwise" else self.weight.shape[0]

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    def copy(self) -> "LayerParams":
        return LayerParams(
            self.kind,
            self.weight.copy(),
            None if self.bias is None else self.bias.copy(),
        )


@dataclass
class BnState:
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = BN_MOMENTUM
    eps: float = BN_EPS

    @classmethod
    def fresh(cls, channels: int, dtype=np.float32) -> "BnState":
        return cls(np.zeros(channels, dtype), np.ones(channels, dtype))

    def copy(self) -> "BnState":
        return replace(self, running_mean=self.running_mean.copy(),
                       running_var=self.running_var.copy())


def _check4(x: np.ndarray, name: str = "x"):
    if x.ndim != 4:
        raise ValueError(f"{name} must be a 4-d NCHW array, got shape {x.shape}")


# -- pointwise ---------------------------------------------------------------

def conv_pointwise_fwd(x: np.ndarray, p: LayerParams) -> np.ndarray:
    _check4(x)
    if p.kind != "pointwise":
        raise ValueError("expected pointwise layer")
    n, c, h, w = x.shape
    if c != p.in_channels:
        raise ValueError(f"input has {c} channels, layer expects {p.in_channels}")
    wm = p.weight[:, :, 0, 0].astype(x.dtype, copy=False)
    out = np.matmul(wm, x.reshape(n, c, h * w)).reshape(n, -1, h, w)
    if p.bias is not None:
        out += p.bias.astype(x.dtype, copy=False)[None, :, None, None]
    return out


def conv_pointwise_bwd(x: np.ndarray, p: LayerParams, grad_out: np.ndarray):
    """Return ``(grad_x, grad_weight, grad_bias)``; grad_bias is None without bias."""
    n, c, h, w = x.shape
    f = p.out_channels
    g = grad_out.reshape(n, f, h * w)
    xf = x.reshape(n, c, h * w)
    wm = p.weight[:, :, 0, 0].astype(x.dtype, copy=False)
    gx = np.matmul(wm.T, g).reshape(n, c, h, w)
    gw = np.zeros((f, c), dtype=np.float64)
    for i in range(n):
        gw += g[i] @ xf[i].T
    gw = gw.astype(p.weight.dtype).reshape(f, c, 1, 1)
    gb = g.sum(axis=(0, 2)) if p.bias is not None else None
    return gx, gw, gb


# -- depthwise 3x3 -----------------------------------------------------------

def _pad_vector(x: np.ndarray, pad_value: Optional[np.ndarray]) -> np.ndarray:
    if pad_value is None:
        return np.zeros(x.shape[1], dtype=x.dtype)
    return np.asarray(pad_value, dtype=x.dtype)


def conv_depthwise3x3_fwd(
    x: np.ndarray, p: LayerParams, pad_value: Optional[np.ndarray] = None
) -> np.ndarray:
    """Per-channel 3x3 correlation, same-size output.

    The one-pixel border is filled with zeros, or with ``pad_value[c]`` per
    channel when given.
    """
    _check4(x)
    if p.kind != "depthwise":
        raise ValueError("expected depthwise layer")
    if x.shape[1] != p.in_channels:
        raise ValueError(f"input has {x.shape[1]} channels, layer expects {p.in_channels}")
    x = np.ascontiguousarray(x)
    out = dw3x3_same(x, p.weight[:, 0].astype(x.dtype), _pad_vector(x, pad_value))
    if p.bias is not None:
        out += p.bias.astype(x.dtype, copy=False)[None, :, None, None]
    return out


def conv_depthwise3x3_bwd(
    x: np.ndarray,
    p: LayerParams,
    grad_out: np.ndarray,
    pad_value: Optional[np.ndarray] = None,
):
    """Return ``(grad_x, grad_weight, grad_bias, grad_pad_value)``."""
    g = np.ascontiguousarray(grad_out)
    x = np.ascontiguousarray(x)
    w = p.weight[:, 0].astype(np.float64)
    pad = _pad_vector(x, pad_value).astype(np.float64)
    gw_in, outside = dw3x3_wgrad(x, g)
    gw = (gw_in + pad[:, None, None] * outside).astype(p.weight.dtype)[:, None]
    gp = (w * outside).sum(axis=(1, 2))
    # adjoint of a same-size correlation: correlate with the flipped kernel
    flipped = np.ascontiguousarray(w[:, ::-1, ::-1]).astype(g.dtype)
    gx = dw3x3_same(g, flipped, np.zeros(g.shape[1], dtype=g.dtype))
    gb = g.sum(axis=(0, 2, 3)) if p.bias is not None else None
    return gx, gw, gb, gp


# -- batch norm --------------------------------------------------------------

@dataclass
class BnCache:
    y: np.ndarray
    mean: np.ndarray
    inv_std: np.ndarray


def bn_train(x: np.ndarray, s: BnState):
    """Train-mode BN returning ``(y, new_state, cache)``."""
    _check4(x)
    n, c, h, w = x.shape
    if n * h * w < 2:
        raise ValueError("batch norm needs at least two samples per channel")
    x = np.ascontiguousarray(x)
    mean, var = channel_mean_var(x)
    inv_std = 1.0 / np.sqrt(var + s.eps)
    y = bn_normalize(x, mean.astype(x.dtype), inv_std.astype(x.dtype))
    g = s.momentum
    new_state = replace(
        s,
        running_mean=(g * s.running_mean + (1 - g) * mean).astype(s.running_mean.dtype),
        running_var=(g * s.running_var + (1 - g) * var).astype(s.running_var.dtype),
    )
    return y, new_state, BnCache(y, mean, inv_std)


def bn_fwd_train(x: np.ndarray, s: BnState):
    y, new_state, _ = bn_train(x, s)
    return y, new_state


def bn_fwd_eval(x: np.ndarray, s: BnState) -> np.ndarray:
    _check4(x)
    if x.shape[1] != s.running_mean.shape[0]:
        raise ValueError("channel count does not match BN state")
    inv_std = 1.0 / np.sqrt(s.running_var.astype(np.float64) + s.eps)
    return (x - s.running_mean.astype(x.dtype)[None, :, None, None]) * inv_std.astype(x.dtype)[None, :, None, None]


def bn_shift(mean: np.ndarray, inv_std: np.ndarray) -> np.ndarray:
    """Normalized value of a raw zero: ``-mean / std`` per channel."""
    return -np.asarray(mean) * np.asarray(inv_std)


def bn_bwd_train(grad_y: np.ndarray, cache: BnCache, grad_shift: Optional[np.ndarray] = None):
    """Backward of train-mode BN.

    ``grad_shift`` is an extra per-channel gradient w.r.t. ``bn_shift`` of the
    batch statistics (used when a following conv pads with that value).
    """
    n, c, h, w = grad_y.shape
    m = n * h * w
    g = np.ascontiguousarray(grad_y)
    sum_g, sum_gy = bn_grad_sums(g, cache.y)
    r = cache.inv_std
    # gx = r * (g - mean(g) - y * mean(g * y))
    scale = r
    offset = -r * sum_g / m
    slope = -r * sum_gy / m
    if grad_shift is not None:
        # d(shift)/dx_i = (r / m) * (-1 - shift * y_i)
        coef = np.asarray(grad_shift) * r / m
        offset = offset - coef
        slope = slope - coef * bn_shift(cache.mean, r)
    dt = g.dtype
    return bn_grad_apply(g, cache.y, scale.astype(dt), offset.astype(dt), slope.astype(dt))


def bn_bwd_eval(grad_y: np.ndarray, s: BnState) -> np.ndarray:
    inv_std = 1.0 / np.sqrt(s.running_var.astype(np.float64) + s.eps)
    return grad_y * inv_std.astype(grad_y.dtype)[None, :, None, None]


# -- relu --------------------------------------------------------------------

def relu_fwd(x: np.ndarray, inplace: bool = False) -> np.ndarray:
    if inplace:
        return np.maximum(x, 0, out=x)
    return np.maximum(x, 0)


def relu_bwd(out: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    return relu_mask_grad(np.ascontiguousarray(out), np.ascontiguousarray(grad_out))


# -- adam --------------------------------------------------------------------

@dataclass
class AdamState:
    lr: float = 0.02
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params: list, grads: list, st: AdamState):
    """One bias-corrected Adam update. Returns ``(new_params, new_state)``.

    Raises FloatingPointError on a non-finite gradient.
    """
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite gradient")
    m = st.m or [np.zeros_like(p) for p in params]
    v = st.v or [np.zeros_like(p) for p in params]
    t = st.t + 1
    bc1 = 1.0 - st.beta1 ** t
    bc2 = 1.0 - st.beta2 ** t
    new_params, new_m, new_v = [], [], []
    for p, g, mi, vi in zip(params, grads, m, v):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        g = g.astype(p.dtype, copy=False)
        mi = st.beta1 * mi + (1 - st.beta1) * g
        vi = st.beta2 * vi + (1 - st.beta2) * (g * g)
        step = (st.lr / bc1) * mi / (np.sqrt(vi / bc2) + st.eps)
        new_params.append((p - step).astype(p.dtype, copy=False))
        new_m.append(mi)
        new_v.append(vi)
    return new_params, replace(st, t=t, m=new_m, v=new_v)
