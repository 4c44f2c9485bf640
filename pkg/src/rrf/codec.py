"""Parameter quantization and payload coding for folded networks.

Weights are quantized per group (one group per filter of a pointwise layer,
one per channel of a depthwise layer), biases per layer. A scale is stored as
a 16-bit significand and a signed 8-bit exponent, ``alpha = sig * 2**(exp - 16)``.
The significand is rounded to nearest. The represented scale can exceed
the exact one by at most 2**-16 relative, which for 16 or fewer bits stays
below half a quantization step at the group maximum, so values keep to their
bit range. Re-quantizing a dequantized net reproduces its scales.

Payload symbol order is layer-major; within a layer: weight scales (sig, exp
per group), bias scale (sig, exp), weights (filter, then kernel position),
biases. NEW payloads code the values, DIFF payloads code element-wise deltas
against the previous QuantNet. Each category has its own adaptive model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .network import NetParams, NetSpec
from .ops import LayerParams
from .rangecoder import AdaptiveModel, DecodeError, IntegrityError, RangeDecoder, RangeEncoder

SIG_BITS = 16
MIN_BITS = 2
MAX_BITS = 16
CATEGORIES = ("weight", "bias", "sig", "exp")


def check_bits(bits: int, name: str = "bit width") -> int:
    bits = int(bits)
    if not MIN_BITS <= bits <= MAX_BITS:
        raise ValueError(f"{name} must be in [{MIN_BITS}, {MAX_BITS}], got {bits}")
    return bits


def qmax(bits: int) -> int:
    return (1 << (bits - 1)) - 1


# -- scales ------------------------------------------------------------------

def encode_scale(alpha: float) -> tuple[int, int]:
    """Split a positive scale into ``(significand, exponent)``; 0 -> ``(0, 0)``.

    Scales too small for the exponent range collapse to the zero sentinel.
    """
    if alpha == 0:
        return 0, 0
    if not (alpha > 0 and math.isfinite(alpha)):
        raise ValueError(f"scale must be finite and non-negative, got {alpha}")
    m, e = math.frexp(alpha)
    if e < -128:
        return 0, 0
    if e > 127:
        raise ValueError(f"scale {alpha} exceeds the exponent range")
    sig = int(round(m * (1 << SIG_BITS)))
    if sig == 1 << SIG_BITS:
        sig, e = 1 << (SIG_BITS - 1), e + 1
        if e > 127:
            raise ValueError(f"scale {alpha} exceeds the exponent range")
    return sig, e


def decode_scale(sig: int, exp: int) -> float:
    if sig == 0:
        return 0.0
    return math.ldexp(float(sig), int(exp) - SIG_BITS)


def round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def scale_round(w: np.ndarray, a: float) -> np.ndarray:
    """``round_half_away(w * a)`` evaluated exactly.

    The float product can land on the wrong side of a .5 tie; those few
    elements are redone in rational arithmetic.
    """
    w = np.asarray(w, dtype=np.float64)
    x = w * a
    q = round_half_away(x)
    near = np.flatnonzero(np.abs(np.abs(x - q) - 0.5) < 1e-6)
    if near.size:
        fa = Fraction(a)
        flat = q.reshape(-1)
        for i in near:
            v = Fraction(float(w.flat[i])) * fa
            m = math.floor(abs(v) + Fraction(1, 2))
            flat[i] = -m if v < 0 else m
    return q


def _scale_for(maxabs: float, bits: int) -> tuple[int, int]:
    if maxabs == 0:
        return 0, 0
    return encode_scale(qmax(bits) / maxabs)


# -- QuantNet ----------------------------------------------------------------

@dataclass
class QuantLayer:
    kind: str
    wq: np.ndarray          # int32, same shape as the weight
    w_sig: np.ndarray       # (groups,) int64
    w_exp: np.ndarray       # (groups,) int64
    bq: np.ndarray          # (filters,) int32
    b_sig: int
    b_exp: int

    @property
    def alpha(self) -> np.ndarray:
        return np.array([decode_scale(s, e) for s, e in zip(self.w_sig, self.w_exp)])

    @property
    def beta(self) -> float:
        return decode_scale(self.b_sig, self.b_exp)

    def __eq__(self, other):
        if not isinstance(other, QuantLayer):
            return NotImplemented
        return (self.kind == other.kind and self.b_sig == other.b_sig
                and self.b_exp == other.b_exp
                and all(np.array_equal(a, b) for a, b in
                        [(self.wq, other.wq), (self.w_sig, other.w_sig),
                         (self.w_exp, other.w_exp), (self.bq, other.bq)]))


@dataclass
class QuantNet:
    spec: NetSpec
    layers: list
    b_w: int
    b_b: int

    def __eq__(self, other):
        if not isinstance(other, QuantNet):
            return NotImplemented
        return (self.spec == other.spec and self.b_w == other.b_w and self.b_b == other.b_b
                and self.layers == other.layers)

    def validate(self):
        shapes = self.spec.layer_shapes()
        if len(self.layers) != len(shapes):
            raise ValueError("layer count does not match spec")
        lw, lb = qmax(self.b_w), qmax(self.b_b)
        for q, (kind, wshape, _, _) in zip(self.layers, shapes):
            if q.kind != kind or q.wq.shape != tuple(wshape):
                raise ValueError("quantized layer does not match spec")
            g = wshape[0]
            if q.w_sig.shape != (g,) or q.w_exp.shape != (g,) or q.bq.shape != (g,):
                raise ValueError("scale or bias length does not match spec")
            if np.abs(q.wq).max(initial=0) > lw or np.abs(q.bq).max(initial=0) > lb:
                raise ValueError("quantized value outside its bit range")
            for s in list(q.w_sig) + [q.b_sig]:
                if not (s == 0 or (1 << (SIG_BITS - 1)) <= s < (1 << SIG_BITS)):
                    raise ValueError(f"invalid scale significand {s}")
            for e in list(q.w_exp) + [q.b_exp]:
                if not -128 <= e <= 127:
                    raise ValueError(f"scale exponent {e} outside int8")
        return self


def quantize(folded: NetParams, b_w: int, b_b: int) -> QuantNet:
    """Quantize a BN-free network with ``b_w``-bit weights and ``b_b``-bit biases."""
    if not folded.folded:
        raise ValueError("quantize expects a folded (BN-free) network")
    b_w, b_b = check_bits(b_w, "b_w"), check_bits(b_b, "b_b")
    layers = []
    for p in folded.layers:
        w = p.weight.astype(np.float64)
        g = w.shape[0]
        flat = w.reshape(g, -1)
        sig = np.zeros(g, np.int64)
        exp = np.zeros(g, np.int64)
        wq = np.zeros_like(flat, dtype=np.int32)
        for i in range(g):
            sig[i], exp[i] = _scale_for(float(np.abs(flat[i]).max()), b_w)
            a = decode_scale(sig[i], exp[i])
            wq[i] = scale_round(flat[i], a)
        b = np.zeros(g) if p.bias is None else p.bias.astype(np.float64)
        bs, be = _scale_for(float(np.abs(b).max()), b_b)
        bq = scale_round(b, decode_scale(bs, be)).astype(np.int32)
        layers.append(QuantLayer(p.kind, wq.reshape(w.shape), sig, exp, bq, bs, be))
    return QuantNet(folded.spec, layers, b_w, b_b).validate()


def dequantize(q: QuantNet) -> NetParams:
    """Folded float64 network with ``w = w^q / alpha`` and ``b = b^q / beta``."""
    layers = []
    for ql in q.layers:
        a = ql.alpha
        inv = np.divide(1.0, a, out=np.zeros_like(a), where=a > 0)
        g = ql.wq.shape[0]
        w = (ql.wq.reshape(g, -1) * inv[:, None]).reshape(ql.wq.shape)
        beta = ql.beta
        b = ql.bq / beta if beta > 0 else np.zeros(g)
        layers.append(LayerParams(ql.kind, w, b.astype(np.float64)))
    return NetParams(q.spec, layers, [None] * len(layers))


# -- payloads ----------------------------------------------------------------

def _models() -> dict:
    return {c: AdaptiveModel() for c in CATEGORIES}


def _layer_fields(ql: QuantLayer):
    """Yield ``(category, flat int array)`` in payload order."""
    yield "sig", ql.w_sig
    yield "exp", ql.w_exp
    yield "sig", np.array([ql.b_sig])
    yield "exp", np.array([ql.b_exp])
    yield "weight", ql.wq.ravel()
    yield "bias", ql.bq


def _encode(values_per_layer) -> bytes:
    enc = RangeEncoder()
    models = _models()
    for fields in values_per_layer:
        for cat, arr in fields:
            m = models[cat]
            for v in arr.tolist():
                enc.encode_int(m, int(v))
    return enc.finish()


def encode_new(q: QuantNet) -> bytes:
    q.validate()
    return _encode(_layer_fields(ql) for ql in q.layers)


def encode_diff(curr: QuantNet, prev: QuantNet) -> bytes:
    """Code ``curr - prev`` element-wise; both must share spec and bit widths."""
    _check_compatible(curr, prev)
    curr.validate()

    def deltas(a: QuantLayer, b: QuantLayer):
        for (cat, x), (_, y) in zip(_layer_fields(a), _layer_fields(b)):
            yield cat, x.astype(np.int64) - y.astype(np.int64)

    return _encode(deltas(a, b) for a, b in zip(curr.layers, prev.layers))


def _check_compatible(curr: QuantNet, prev: QuantNet):
    if curr.spec != prev.spec:
        raise ValueError("networks have different specs")
    if (curr.b_w, curr.b_b) != (prev.b_w, prev.b_b):
        raise ValueError("networks have different bit widths")


def _decode(payload: bytes, spec: NetSpec, b_w: int, b_b: int, base=None) -> QuantNet:
    b_w, b_b = check_bits(b_w, "b_w"), check_bits(b_b, "b_b")
    dec = RangeDecoder(payload)
    models = _models()

    def read(cat, n, ref=None):
        m = models[cat]
        out = np.array([dec.decode_int(m) for _ in range(n)], dtype=np.int64)
        return out if ref is None else out + ref.astype(np.int64)

    layers = []
    for li, (kind, wshape, _, _) in enumerate(spec.layer_shapes()):
        g = wshape[0]
        r = None if base is None else base.layers[li]
        w_sig = read("sig", g, None if r is None else r.w_sig)
        w_exp = read("exp", g, None if r is None else r.w_exp)
        b_sig = int(read("sig", 1, None if r is None else np.array([r.b_sig]))[0])
        b_exp = int(read("exp", 1, None if r is None else np.array([r.b_exp]))[0])
        wq = read("weight", int(np.prod(wshape)), None if r is None else r.wq.ravel())
        bq = read("bias", g, None if r is None else r.bq)
        layers.append(QuantLayer(kind, wq.reshape(wshape).astype(np.int32), w_sig, w_exp,
                                 bq.astype(np.int32), b_sig, b_exp))
    dec.finish()
    q = QuantNet(spec, layers, b_w, b_b)
    try:
        return q.validate()
    except ValueError as exc:
        raise IntegrityError(f"decoded parameters are invalid: {exc}") from exc


def decode_new(payload: bytes, spec: NetSpec, b_w: int, b_b: int) -> QuantNet:
    return _decode(payload, spec, b_w, b_b)


def decode_diff(prev: QuantNet, payload: bytes) -> QuantNet:
    return _decode(payload, prev.spec, prev.b_w, prev.b_b, base=prev)


__all__ = [
    "DecodeError", "IntegrityError", "QuantLayer", "QuantNet", "check_bits", "decode_diff",
    "decode_new", "decode_scale", "dequantize", "encode_diff", "encode_new", "encode_scale",
    "qmax", "quantize", "round_half_away", "scale_round",
]
