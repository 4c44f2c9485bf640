"""Online per-GoP training: patch sampling, normalized loss, regularizers."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from ._alloc import tune_allocator
from .network import (
    NetParams,
    NetSpec,
    backward,
    build_net,
    forward_cached,
    pack,
    pad_to_multiple,
)
from .ops import AdamState, adam_step
from .yuv import GopSegment

log = logging.getLogger(__name__)

REG_MODES = ("l2", "temporal", "none")
DEFAULT_REG_WEIGHT = {"l2": 1e-4, "temporal": 0.1, "none": 0.0}


@dataclass
class TrainConfig:
    patch_size: int = 48
    batch_size: int = 64
    iterations: int = 1000
    learning_rate: float = 0.02
    reg_mode: str = "l2"
    reg_weight: Optional[float] = None
    seed: int = 0

    def __post_init__(self):
        if self.reg_mode not in REG_MODES:
            raise ValueError(f"reg_mode must be one of {REG_MODES}")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.patch_size < 1 or self.batch_size < 1:
            raise ValueError("patch_size and batch_size must be positive")

    @property
    def effective_reg_weight(self) -> float:
        if self.reg_weight is None:
            return DEFAULT_REG_WEIGHT[self.reg_mode]
        return self.reg_weight


@dataclass
class TrainOutcome:
    net: Optional[NetParams]
    final_loss: float = float("nan")
    loss_trace: list = field(default_factory=list)
    fallback: bool = False
    skipped: bool = False
    optimizer: Optional[AdamState] = None


@dataclass
class LossContext:
    l1_norm: float
    prev_weights: Optional[list] = None


# -- data --------------------------------------------------------------------

@dataclass
class RoleData:
    """Normalized decoded input and residual target for one role of a GoP.

    ``decoded`` and ``target`` are lists (one entry for luma, U and V for
    chroma) of ``(frames, H, W)`` float32 stacks, already padded to the pack
    grid.
    """

    decoded: list
    target: list
    shape: tuple

    @property
    def l1_norm(self) -> float:
        total = sum(float(np.abs(t).sum(dtype=np.float64)) for t in self.target)
        count = sum(t.size for t in self.target)
        return total / count


def role_data(decoded: list, source: list, spec: NetSpec) -> RoleData:
    """Build training arrays from uint8 plane stacks (one or two per role)."""
    dec, tgt = [], []
    shape = decoded[0].shape[-2:]
    for d, s in zip(decoded, source):
        d = np.asarray(d)
        s = np.asarray(s)
        if d.shape != s.shape:
            raise ValueError("decoded and source planes differ in shape")
        if d.ndim == 2:
            d, s = d[None], s[None]
        df = d.astype(np.float32) / 255.0
        rf = (s.astype(np.float32) - d.astype(np.float32)) / 255.0
        dec.append(pad_to_multiple(df, spec.pack))
        tgt.append(pad_to_multiple(rf, spec.pack))
    return RoleData(dec, tgt, tuple(shape))


def gop_role_planes(gop: GopSegment, role: str):
    channels = ("Y",) if role == "luma" else ("U", "V")
    decoded = [gop.stack(c, "decoded") for c in channels]
    source = [gop.stack(c, "source") for c in channels]
    return decoded, source


def patch_dims(data: RoleData, spec: NetSpec, cfg: TrainConfig) -> tuple:
    h, w = data.decoded[0].shape[-2:]
    ph, pw = spec.pack.ph, spec.pack.pw
    psh = min(cfg.patch_size, h) // ph * ph
    psw = min(cfg.patch_size, w) // pw * pw
    return psh, psw


def sample_positions(n_frames: int, plane_hw: tuple, patch_hw: tuple, pack_hw: tuple,
                     batch_size: int, rng: np.random.Generator) -> np.ndarray:
    """Return ``(batch, 3)`` rows of ``(frame, y, x)``.

    Each frame is tiled by a randomly offset grid of disjoint patches; a batch
    draws cells without replacement, so patches never overlap unless the GoP
    holds fewer cells than the batch size (then the rest are drawn with
    replacement).
    """
    h, w = plane_hw
    psh, psw = patch_hw
    ph, pw = pack_hw
    cells = []
    for f in range(n_frames):
        oy = int(rng.integers(0, min(psh, h - psh + 1))) // ph * ph
        ox = int(rng.integers(0, min(psw, w - psw + 1))) // pw * pw
        ys = np.arange(oy, h - psh + 1, psh)
        xs = np.arange(ox, w - psw + 1, psw)
        gy, gx = np.meshgrid(ys, xs, indexing="ij")
        cells.append(np.stack([np.full(gy.size, f), gy.ravel(), gx.ravel()], axis=1))
    cells = np.concatenate(cells)
    if len(cells) >= batch_size:
        pick = rng.choice(len(cells), size=batch_size, replace=False)
    else:
        extra = rng.choice(len(cells), size=batch_size - len(cells), replace=True)
        pick = np.concatenate([rng.permutation(len(cells)), extra])
    return cells[pick]


def sample_batch(data: RoleData, spec: NetSpec, cfg: TrainConfig, rng: np.random.Generator):
    """Draw one training batch as packed ``(input, target)`` tensors."""
    n_frames, h, w = data.decoded[0].shape
    psh, psw = patch_dims(data, spec, cfg)
    pos = sample_positions(n_frames, (h, w), (psh, psw), (spec.pack.ph, spec.pack.pw),
                           cfg.batch_size, rng)
    xs, ys = [], []
    for dec, tgt in zip(data.decoded, data.target):
        xp = np.stack([dec[f, y:y + psh, x:x + psw] for f, y, x in pos])
        yp = np.stack([tgt[f, y:y + psh, x:x + psw] for f, y, x in pos])
        xs.append(pack(xp, spec.pack))
        ys.append(pack(yp, spec.pack))
    return np.concatenate(xs, axis=1), np.concatenate(ys, axis=1)


# -- objective ---------------------------------------------------------------

def loss_and_grad(pred: np.ndarray, target: np.ndarray, ctx: LossContext):
    """``mean((pred - target)^2) / (4 L1)`` and its gradient.

    The gradient is ``(pred - target) / (2 L1)`` per element, scaled by
    ``1 / count`` from the batch mean.
    """
    if pred.shape != target.shape:
        raise ValueError(f"prediction {pred.shape} and target {target.shape} differ")
    if not ctx.l1_norm > 0:
        raise ValueError("L1 normalizer must be positive")
    diff = pred - target
    m = diff.size
    loss = float(np.square(diff, dtype=np.float64).sum() / m / (4.0 * ctx.l1_norm))
    grad = diff * (0.5 / (ctx.l1_norm * m))
    return loss, grad.astype(pred.dtype, copy=False)


def normalize_weights(weights: list) -> list:
    """Scale every filter/channel group (first axis) by its max magnitude."""
    out = []
    for w in weights:
        flat = w.reshape(w.shape[0], -1).astype(np.float64)
        m = np.abs(flat).max(axis=1, keepdims=True)
        safe = np.where(m > 0, m, 1.0)
        out.append((flat / safe).reshape(w.shape))
    return out


def temporal_diff_reg(weights: list, prev_normalized: list):
    """Squared distance between normalized weights and the previous GoP's.

    Each layer's sum is divided by its weight count. Returns
    ``(value, grads)`` with one gradient array per weight array.
    """
    if len(weights) != len(prev_normalized):
        raise ValueError("layer count mismatch")
    total = 0.0
    grads = []
    for w, pbar in zip(weights, prev_normalized):
        if w.shape != pbar.shape:
            raise ValueError(f"weight shape {w.shape} does not match previous {pbar.shape}")
        flat = w.reshape(w.shape[0], -1).astype(np.float64)
        pflat = pbar.reshape(w.shape[0], -1)
        absw = np.abs(flat)
        arg = absw.argmax(axis=1)
        rows = np.arange(flat.shape[0])
        m = absw[rows, arg]
        safe = np.where(m > 0, m, 1.0)
        wbar = flat / safe[:, None]
        d = wbar - pflat
        scale = 1.0 / w.size
        total += scale * float((d * d).sum())
        g = 2.0 * scale * d / safe[:, None]
        # chain rule through the max term
        corr = 2.0 * scale * (d * flat).sum(axis=1) * np.sign(flat[rows, arg]) / safe ** 2
        g[rows, arg] -= corr
        g[m == 0] = 0.0
        grads.append(g.reshape(w.shape).astype(w.dtype))
    return total, grads


def l2_reg(weights: list, lam: float):
    total = lam * sum(float(np.square(w, dtype=np.float64).sum()) for w in weights)
    return total, [(2.0 * lam) * w for w in weights]


# -- loop --------------------------------------------------------------------

def _weight_indices(net: NetParams) -> list[int]:
    idx, k = [], 0
    for p in net.layers:
        idx.append(k)
        k += 2 if p.bias is not None else 1
    return idx


def train_role(data: RoleData, spec: NetSpec, cfg: TrainConfig,
               prev: Optional[NetParams] = None,
               prev_optimizer: Optional[AdamState] = None) -> TrainOutcome:
    """Train (or fine-tune from ``prev``) one network on one GoP's role data.

    ``prev_optimizer`` continues the Adam moments of the run that produced
    ``prev``; without it fine-tuning starts from fresh moments.
    """
    tune_allocator()
    l1 = data.l1_norm
    if not l1 > 0:
        return TrainOutcome(None, skipped=True)
    seeds = np.random.SeedSequence(cfg.seed).spawn(2)
    init_rng = np.random.default_rng(seeds[0])
    rng = np.random.default_rng(seeds[1])
    if prev is not None:
        if prev.spec != spec:
            raise ValueError("previous network has a different spec")
        net = prev.astype(np.float32)
    else:
        net = build_net(spec, init_rng)

    ctx = LossContext(l1)
    reg_mode = cfg.reg_mode
    lam = cfg.effective_reg_weight
    if reg_mode == "temporal":
        if prev is None:
            reg_mode, lam = "l2", DEFAULT_REG_WEIGHT["l2"]
        else:
            ctx.prev_weights = normalize_weights([p.weight for p in prev.layers])

    widx = _weight_indices(net)
    params = net.trainables()
    if prev is not None and prev_optimizer is not None:
        adam = replace(prev_optimizer, lr=cfg.learning_rate,
                       m=[a.copy() for a in prev_optimizer.m],
                       v=[a.copy() for a in prev_optimizer.v])
    else:
        adam = AdamState(lr=cfg.learning_rate)
    trace = []
    for it in range(cfg.iterations):
        x, y = sample_batch(data, spec, cfg, rng)
        out, cache, new_bn = forward_cached(net, x, "train")
        loss, g = loss_and_grad(out, y, ctx)
        grads = backward(net, cache, g)
        weights = [params[i] for i in widx]
        if reg_mode == "l2" and lam:
            reg, rgrads = l2_reg(weights, lam)
        elif reg_mode == "temporal" and lam:
            reg, rgrads = temporal_diff_reg(weights, ctx.prev_weights)
            reg *= lam
            rgrads = [lam * r for r in rgrads]
        else:
            reg, rgrads = 0.0, None
        if rgrads is not None:
            for i, rg in zip(widx, rgrads):
                grads[i] = grads[i] + rg
        total = loss + reg
        if not np.isfinite(total):
            log.warning("event=train_fallback iteration=%d loss=%s", it, total)
            return TrainOutcome(None, float("nan"), trace, fallback=True)
        try:
            params, adam = adam_step(params, grads, adam)
        except FloatingPointError:
            log.warning("event=train_fallback iteration=%d reason=nonfinite_grad", it)
            return TrainOutcome(None, float("nan"), trace, fallback=True)
        net.set_trainables(params)
        net.bn = new_bn
        trace.append(total)
    return TrainOutcome(net, trace[-1], trace, optimizer=adam)


def train_gop(gop: GopSegment, role: str, spec: NetSpec, cfg: TrainConfig,
              prev: Optional[NetParams] = None,
              prev_optimizer: Optional[AdamState] = None) -> TrainOutcome:
    if spec.role != role:
        raise ValueError(f"spec is for {spec.role}, asked to train {role}")
    decoded, source = gop_role_planes(gop, role)
    return train_role(role_data(decoded, source, spec), spec, cfg, prev, prev_optimizer)
