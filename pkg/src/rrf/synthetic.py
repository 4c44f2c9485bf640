"""Synthetic source/decoded clip pairs with structured, learnable degradations.

Stands in for codec output: the source is a moving procedural texture, the
"decoded" clip is the source passed through a separable blur, 8x8 DCT
coefficient truncation, or amplitude banding.
"""

from __future__ import annotations

import numpy as np

from .yuv import YuvFrame

KINDS = ("blur", "blocky", "banding")
DEFAULT_STRENGTH = {"blur": 0.25, "blocky": 6, "banding": 10}


def _texture(h: int, w: int, t: int, rng_params: dict, chroma: bool = False) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    if chroma:
        yy, xx = yy * 2, xx * 2
    vy, vx = rng_params["velocity"]
    yy = yy + vy * t
    xx = xx + vx * t
    img = np.zeros((h, w))
    for fy, fx, amp, phase in rng_params["waves"]:
        img += amp * np.sin(2 * np.pi * (fy * yy + fx * xx) + phase)
    for cy, cx, r, amp in rng_params["blobs"]:
        d = np.hypot(yy - cy, xx - cx)
        img += amp * (d < r)
    return img


def _params(rng: np.random.Generator, n_waves: int, fmax: float, amp: float, h: int, w: int) -> dict:
    waves = []
    for _ in range(n_waves):
        f = rng.uniform(0.02, fmax)
        theta = rng.uniform(0, np.pi)
        waves.append((f * np.sin(theta), f * np.cos(theta), rng.uniform(0.3, 1.0) * amp,
                      rng.uniform(0, 2 * np.pi)))
    blobs = [(rng.uniform(0, h), rng.uniform(0, w), rng.uniform(4, 24), rng.uniform(-1, 1) * amp)
             for _ in range(6)]
    return {"waves": waves, "blobs": blobs, "velocity": tuple(rng.uniform(-1.5, 1.5, size=2))}


def make_source(frames: int, width: int, height: int, seed: int = 0,
                stationary: bool = False) -> list[YuvFrame]:
    """Moving procedural texture. ``stationary`` freezes the motion."""
    if width % 2 or height % 2:
        raise ValueError("width and height must be even")
    rng = np.random.default_rng(seed)
    yp = _params(rng, 8, 0.3, 18.0, height, width)
    up = _params(rng, 4, 0.12, 14.0, height, width)
    vp = _params(rng, 4, 0.12, 14.0, height, width)
    if stationary:
        for p in (yp, up, vp):
            p["velocity"] = (0.0, 0.0)
    out = []
    for t in range(frames):
        y = 128 + _texture(height, width, t, yp)
        u = 128 + _texture(height // 2, width // 2, t, up, chroma=True)
        v = 128 + _texture(height // 2, width // 2, t, vp, chroma=True)
        out.append(YuvFrame(*(np.clip(np.rint(p), 16, 235).astype(np.uint8) for p in (y, u, v)), t))
    return out


def blur_plane(plane: np.ndarray, strength: float) -> np.ndarray:
    """Separable ``[s, 1-2s, s]`` blur with edge replication."""
    k = np.array([strength, 1 - 2 * strength, strength])
    x = plane.astype(np.float64)
    p = np.pad(x, ((1, 1), (0, 0)), mode="edge")
    x = k[0] * p[:-2] + k[1] * p[1:-1] + k[2] * p[2:]
    p = np.pad(x, ((0, 0), (1, 1)), mode="edge")
    return k[0] * p[:, :-2] + k[1] * p[:, 1:-1] + k[2] * p[:, 2:]


def _dct_matrix(n: int = 8) -> np.ndarray:
    k = np.arange(n)
    m = np.cos(np.pi * (2 * k[None, :] + 1) * k[:, None] / (2 * n)) * np.sqrt(2.0 / n)
    m[0] /= np.sqrt(2.0)
    return m


def blocky_plane(plane: np.ndarray, keep: int) -> np.ndarray:
    """Zero every 8x8 DCT coefficient with ``u + v >= keep``."""
    h, w = plane.shape
    hp, wp = -(-h // 8) * 8, -(-w // 8) * 8
    x = np.pad(plane.astype(np.float64), ((0, hp - h), (0, wp - w)), mode="edge")
    d = _dct_matrix()
    blocks = x.reshape(hp // 8, 8, wp // 8, 8).transpose(0, 2, 1, 3)
    coef = d @ blocks @ d.T
    u, v = np.mgrid[0:8, 0:8]
    coef = coef * ((u + v) < keep)
    rec = d.T @ coef @ d
    return rec.transpose(0, 2, 1, 3).reshape(hp, wp)[:h, :w]


def banding_plane(plane: np.ndarray, step: float) -> np.ndarray:
    return np.floor(plane.astype(np.float64) / step) * step + step / 2.0


def degrade(frames: list[YuvFrame], kind: str, strength=None) -> list[YuvFrame]:
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {KINDS}")
    s = DEFAULT_STRENGTH[kind] if strength is None else strength
    op = {"blur": blur_plane, "blocky": blocky_plane, "banding": banding_plane}[kind]
    out = []
    for f in frames:
        planes = [np.clip(np.rint(op(p, s)), 0, 255).astype(np.uint8) for p in (f.y, f.u, f.v)]
        out.append(YuvFrame(*planes, f.index))
    return out


def gen_synthetic(kind: str, frames: int, width: int, height: int, seed: int = 0,
                  strength=None, stationary: bool = False):
    """Return ``(source, decoded)`` frame lists."""
    source = make_source(frames, width, height, seed, stationary=stationary)
    return source, degrade(source, kind, strength)
