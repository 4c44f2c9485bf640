"""Sequence-level encoder and decoder for the refinement sidecar.

Per GoP and role the encoder trains a network, folds its BN layers,
quantizes it, measures the PSNR of the decoder-side (dequantized) network on
that GoP and signals it only when it helps:

* random access (``ra``): every unit is self-contained, NEW on a positive
  gain, SKIP otherwise.
* low delay (``ld``): the previously signalled network is tested on the new
  GoP first; a fine-tuned network is signalled (DIFF against the previous
  one) only if its gain is positive and beats ``ld_threshold`` times the
  previous network's gain. On SKIP the decoder keeps the previous network.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .codec import (
    IntegrityError,
    QuantNet,
    check_bits,
    decode_diff,
    decode_new,
    dequantize,
    encode_diff,
    encode_new,
    quantize,
)
from .metrics import GainReport, GainRow, psnr_planes
from .network import (
    ROLES,
    NetParams,
    NetSpec,
    PackConfig,
    fold_bn,
    infer,
    pack_role,
    prune_constant_channels,
    unpack_role,
)
from .ops import AdamState
from .stream import GopUnit, SidecarStream, StreamHeader
from .training import TrainConfig, role_data, train_role
from .yuv import YuvFrame, segment_gops

log = logging.getLogger(__name__)

QP_BITS = {22: 10, 27: 9, 32: 7, 37: 6}
DEFAULT_QP = 27
ROLE_CHANNELS = {"luma": ("Y",), "chroma": ("U", "V")}


def bits_for_qp(qp: float) -> int:
    """Weight bit width for a QP; off-grid QPs use the nearest listed one (lower on ties)."""
    best = min(QP_BITS, key=lambda q: (abs(q - qp), q))
    return QP_BITS[best]


@dataclass
class EncoderConfig:
    mode: str = "ra"
    gop_len: int = 32
    qp: Optional[float] = None
    b_w: Optional[int] = None
    b_b: int = 10
    pack_luma: str = "1x1"
    pack_chroma: str = "1x1"
    net_width: int = 12
    roles: tuple = ROLES
    iterations: int = 1000
    patch_size: int = 48
    batch_size: int = 64
    learning_rate: float = 0.02
    reg_mode: Optional[str] = None
    reg_weight: Optional[float] = None
    ld_threshold: float = 1.1
    seed: int = 0
    jobs: int = 1

    def __post_init__(self):
        if self.mode not in ("ra", "ld"):
            raise ValueError("mode must be 'ra' or 'ld'")
        if self.gop_len < 1:
            raise ValueError("gop_len must be >= 1")
        self.roles = tuple(r for r in ROLES if r in tuple(self.roles))
        if not self.roles:
            raise ValueError(f"roles must name at least one of {ROLES}")
        PackConfig.parse(self.pack_luma)
        PackConfig.parse(self.pack_chroma)
        check_bits(self.weight_bits, "b_w")
        check_bits(self.b_b, "b_b")
        if self.net_width < 1 or self.net_width > 255:
            raise ValueError("net_width must be in [1, 255]")
        if self.jobs < 1:
            raise ValueError("jobs must be >= 1")
        self.train_config(0)

    @property
    def weight_bits(self) -> int:
        if self.b_w is not None:
            return int(self.b_w)
        return bits_for_qp(DEFAULT_QP if self.qp is None else self.qp)

    def pack_for(self, role: str) -> PackConfig:
        return PackConfig.parse(self.pack_luma if role == "luma" else self.pack_chroma)

    def spec_for(self, role: str) -> NetSpec:
        return NetSpec(role, self.pack_for(role), self.net_width)

    def train_config(self, seed: int) -> TrainConfig:
        reg = self.reg_mode or ("l2" if self.mode == "ra" else "temporal")
        return TrainConfig(self.patch_size, self.batch_size, self.iterations, self.learning_rate,
                           reg, self.reg_weight, seed)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["roles"] = list(self.roles)
        d["b_w"] = self.weight_bits
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


def unit_seed(seed: int, gop: int, role: str) -> int:
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, gop, ROLES.index(role)])
    return int(ss.generate_state(1)[0])


# -- applying a network ------------------------------------------------------

def role_planes(frames: Sequence[YuvFrame], role: str) -> list[np.ndarray]:
    return [np.stack([f.plane(c) for f in frames]) for c in ROLE_CHANNELS[role]]


def refine_planes(net: NetParams, planes: list[np.ndarray]) -> list[np.ndarray]:
    """Refine ``(N, H, W)`` uint8 stacks of one role with a folded network."""
    if not net.folded:
        raise ValueError("refinement needs a folded network")
    cfg = net.spec.pack
    shape = planes[0].shape[-2:]
    out = [np.empty_like(p) for p in planes]
    for i in range(planes[0].shape[0]):
        x = pack_role([p[i:i + 1].astype(np.float64) / 255.0 for p in planes], cfg)
        pred = unpack_role(infer(net, x), cfg, len(planes), shape)
        for o, p, r in zip(out, planes, pred):
            o[i] = np.clip(np.rint(p[i] + r[0] * 255.0), 0, 255).astype(np.uint8)
    return out


def apply_net_to_frame(net: NetParams, frame: YuvFrame, role: str) -> list[np.ndarray]:
    """Refined planes of one role (``[Y]`` or ``[U, V]``) of a single frame."""
    if net.spec.role != role:
        raise ValueError(f"network is for {net.spec.role}, not {role}")
    planes = [frame.plane(c)[None] for c in ROLE_CHANNELS[role]]
    return [p[0] for p in refine_planes(net, planes)]


def _assemble(frames: Sequence[YuvFrame], refined: dict) -> list[YuvFrame]:
    out = []
    for i, f in enumerate(frames):
        y = refined["luma"][0][i] if "luma" in refined else f.y
        u, v = (refined["chroma"][0][i], refined["chroma"][1][i]) if "chroma" in refined else (f.u, f.v)
        out.append(YuvFrame(y, u, v, f.index))
    return out


# -- encoder -----------------------------------------------------------------

@dataclass
class _Candidate:
    q: Optional[QuantNet]
    net: Optional[NetParams]
    psnr_after: float
    status: str  # "ok", "fallback", "zero"
    optimizer: Optional[AdamState] = None


def _train_candidate(dec: list, src: list, spec: NetSpec, tcfg: TrainConfig,
                     b_w: int, b_b: int, prev: Optional[NetParams] = None,
                     prev_optimizer: Optional[AdamState] = None) -> _Candidate:
    data = role_data(dec, src, spec)
    outcome = train_role(data, spec, tcfg, prev, prev_optimizer)
    if outcome.skipped:
        return _Candidate(None, None, math.nan, "zero")
    if outcome.fallback or outcome.net is None:
        return _Candidate(None, None, math.nan, "fallback")
    q = quantize(fold_bn(prune_constant_channels(outcome.net)), b_w, b_b)
    after = psnr_planes(refine_planes(dequantize(q), dec), src)
    return _Candidate(q, outcome.net, after, "ok", outcome.optimizer)


def _ra_unit(args):
    gop, role, dec, src, cfg = args
    spec = cfg.spec_for(role)
    before = psnr_planes(dec, src)
    cand = _train_candidate(dec, src, spec, cfg.train_config(unit_seed(cfg.seed, gop, role)),
                            cfg.weight_bits, cfg.b_b)
    frames = dec[0].shape[0]
    if cand.status == "ok" and cand.psnr_after > before:
        payload = encode_new(cand.q)
        unit = GopUnit("NEW", role, spec.pack, cfg.weight_bits, cfg.b_b, payload)
        row = GainRow(gop, role, "NEW", len(payload), before, cand.psnr_after, "new", frames)
    else:
        decision = "no_gain" if cand.status == "ok" else cand.status
        unit = GopUnit("SKIP", role, spec.pack, cfg.weight_bits, cfg.b_b)
        row = GainRow(gop, role, "SKIP", 0, before, before, decision, frames)
    return unit, row


def _log_row(row: GainRow):
    log.info("event=unit gop=%d role=%s mode=%s payload_bytes=%d psnr_before=%.4f "
             "psnr_after=%.4f decision=%s", row.gop, row.role, row.mode, row.payload_bytes,
             row.psnr_before, row.psnr_after, row.decision)


def _encode_ra(gops, cfg: EncoderConfig):
    tasks = []
    for g, seg in enumerate(gops):
        for role in cfg.roles:
            dec = role_planes(seg.decoded, role)
            src = role_planes(seg.source, role)
            tasks.append((g, role, dec, src, cfg))
    if cfg.jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=min(cfg.jobs, len(tasks))) as ex:
            results = list(ex.map(_ra_unit, tasks))
    else:
        results = [_ra_unit(t) for t in tasks]
    for _, row in results:
        _log_row(row)
    return [u for u, _ in results], [r for _, r in results]


def _encode_ld(gops, cfg: EncoderConfig):
    units = {r: [] for r in cfg.roles}
    rows = {r: [] for r in cfg.roles}
    for role in cfg.roles:
        spec = cfg.spec_for(role)
        prev_q: Optional[QuantNet] = None
        prev_net: Optional[NetParams] = None
        prev_opt: Optional[AdamState] = None
        for g, seg in enumerate(gops):
            dec = role_planes(seg.decoded, role)
            src = role_planes(seg.source, role)
            frames = dec[0].shape[0]
            before = psnr_planes(dec, src)
            prev_after = before
            if prev_q is not None:
                prev_after = psnr_planes(refine_planes(dequantize(prev_q), dec), src)
            prev_gain = prev_after - before
            tcfg = cfg.train_config(unit_seed(cfg.seed, g, role))
            cand = _train_candidate(dec, src, spec, tcfg, cfg.weight_bits, cfg.b_b,
                                    prev_net, prev_opt)
            new_gain = cand.psnr_after - before if cand.status == "ok" else -math.inf
            if prev_q is None:
                accept = new_gain > 0
            else:
                accept = new_gain > 0 and new_gain > cfg.ld_threshold * prev_gain
            if accept:
                if prev_q is None:
                    mode, payload = "NEW", encode_new(cand.q)
                else:
                    mode, payload = "DIFF", encode_diff(cand.q, prev_q)
                unit = GopUnit(mode, role, spec.pack, cfg.weight_bits, cfg.b_b, payload)
                row = GainRow(g, role, mode, len(payload), before, cand.psnr_after, mode.lower(), frames)
                prev_q, prev_net, prev_opt = cand.q, cand.net, cand.optimizer
            else:
                if cand.status != "ok":
                    decision = cand.status
                else:
                    decision = "reuse" if prev_q is not None else "no_gain"
                unit = GopUnit("SKIP", role, spec.pack, cfg.weight_bits, cfg.b_b)
                row = GainRow(g, role, "SKIP", 0, before, prev_after, decision, frames)
            _log_row(row)
            units[role].append(unit)
            rows[role].append(row)
    order = [(g, r) for g in range(len(gops)) for r in cfg.roles]
    return [units[r][g] for g, r in order], [rows[r][g] for g, r in order]


def encode_sequence(decoded: Sequence[YuvFrame], source: Sequence[YuvFrame],
                    cfg: EncoderConfig) -> tuple[SidecarStream, GainReport]:
    if not decoded:
        raise ValueError("empty sequence")
    h, w = decoded[0].y.shape
    gops = segment_gops(decoded, source, cfg.gop_len, cfg.mode)
    header = StreamHeader(cfg.mode, w, h, cfg.gop_len, cfg.roles, cfg.net_width,
                          cfg.pack_for("luma"), cfg.pack_for("chroma"), cfg.weight_bits, cfg.b_b)
    log.info("event=encode_start mode=%s frames=%d gops=%d size=%dx%d roles=%s b_w=%d b_b=%d "
             "iterations=%d seed=%d", cfg.mode, len(decoded), len(gops), w, h, ",".join(cfg.roles),
             cfg.weight_bits, cfg.b_b, cfg.iterations, cfg.seed)
    if cfg.mode == "ra":
        units, rows = _encode_ra(gops, cfg)
    else:
        units, rows = _encode_ld(gops, cfg)
    return SidecarStream(header, units), GainReport(rows)


# -- decoder -----------------------------------------------------------------

def decode_nets(stream: SidecarStream) -> list[dict]:
    """Active folded network per role for every GoP (``None`` = no refinement)."""
    h = stream.header
    prev: dict = {r: None for r in h.roles}
    active: dict = {r: None for r in h.roles}
    out = []
    for g in range(stream.n_gops):
        units = stream.gop_units(g)
        nets = {}
        for role in h.roles:
            u = units[role]
            spec = NetSpec(role, u.pack, h.net_width)
            if u.mode == "NEW":
                q = decode_new(u.payload, spec, u.b_w, u.b_b)
            elif u.mode == "DIFF":
                base = prev[role]
                if base is None:
                    raise IntegrityError(f"GoP {g} {role}: DIFF without a predecessor")
                if base.spec != spec or (base.b_w, base.b_b) != (u.b_w, u.b_b):
                    raise IntegrityError(f"GoP {g} {role}: DIFF unit does not match its predecessor")
                q = decode_diff(base, u.payload)
            else:
                q = None
            if q is not None:
                prev[role] = q
                active[role] = dequantize(q)
            elif h.mode == "ra":
                active[role] = None
            nets[role] = active[role]
        out.append(nets)
    return out


def decode_sequence(decoded: Sequence[YuvFrame], stream: SidecarStream) -> list[YuvFrame]:
    """Apply the stream's networks to the decoded frames."""
    h = stream.header
    if not decoded:
        raise ValueError("empty sequence")
    if decoded[0].y.shape != (h.height, h.width):
        raise ValueError(f"stream is for {h.width}x{h.height}, frames are "
                         f"{decoded[0].width}x{decoded[0].height}")
    n_gops = -(-len(decoded) // h.gop_len)
    if stream.n_gops != n_gops:
        raise IntegrityError(f"stream has {stream.n_gops} GoPs, sequence needs {n_gops}")
    out = []
    for g, nets in enumerate(decode_nets(stream)):
        frames = list(decoded[g * h.gop_len:(g + 1) * h.gop_len])
        refined = {}
        for role, net in nets.items():
            if net is not None:
                refined[role] = refine_planes(net, role_planes(frames, role))
        out.extend(_assemble(frames, refined))
    return out


def default_jobs() -> int:
    return max(1, len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1))
