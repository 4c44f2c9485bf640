"""PSNR, BD-rate, sidecar overhead accounting and report CSV I/O."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

REPORT_FIELDS = ("gop", "role", "mode", "payload_bytes", "psnr_before", "psnr_after", "decision")


def mse(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def psnr_from_mse(err: float, peak: float = 255.0) -> float:
    if err == 0:
        return math.inf
    return 10.0 * math.log10(peak * peak / err)


def psnr(a, b, peak: float = 255.0) -> float:
    """``10 log10(peak^2 / MSE)``; identical inputs give ``inf``."""
    return psnr_from_mse(mse(a, b), peak)


def psnr_planes(a: Sequence, b: Sequence, peak: float = 255.0) -> float:
    """PSNR over the pooled squared error of several plane pairs."""
    sq, n = 0.0, 0
    for x, y in zip(a, b):
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if x.shape != y.shape:
            raise ValueError(f"shape mismatch {x.shape} vs {y.shape}")
        sq += float(np.sum((x - y) ** 2))
        n += x.size
    if n == 0:
        raise ValueError("no samples")
    return psnr_from_mse(sq / n, peak)


# -- BD-rate -----------------------------------------------------------------

@dataclass(frozen=True)
class RdPoint:
    rate: float
    psnr: float

    def __post_init__(self):
        if not self.rate > 0:
            raise ValueError("rate must be positive")


def _curve(points) -> tuple[np.ndarray, np.ndarray]:
    pts = [p if isinstance(p, RdPoint) else RdPoint(*p) for p in points]
    pts = sorted((p for p in pts if math.isfinite(p.psnr)), key=lambda p: (p.psnr, p.rate))
    if len(pts) < 4:
        raise ValueError("BD-rate needs at least 4 finite RD points per curve")
    return np.log([p.rate for p in pts]), np.array([p.psnr for p in pts])


def bd_rate(anchor: Iterable, test: Iterable) -> float:
    """Average rate difference of ``test`` vs ``anchor`` at equal PSNR, in percent.

    Classic variant: cubic fit of log-rate over PSNR, integrated across the
    overlapping PSNR interval. Negative means ``test`` saves rate.
    """
    lr_a, q_a = _curve(anchor)
    lr_t, q_t = _curve(test)
    lo = max(q_a.min(), q_t.min())
    hi = min(q_a.max(), q_t.max())
    if not hi > lo:
        raise ValueError("RD curves have no overlapping PSNR range")
    pa = np.polyint(np.polyfit(q_a, lr_a, 3))
    pt = np.polyint(np.polyfit(q_t, lr_t, 3))
    avg_a = (np.polyval(pa, hi) - np.polyval(pa, lo)) / (hi - lo)
    avg_t = (np.polyval(pt, hi) - np.polyval(pt, lo)) / (hi - lo)
    return float((np.exp(avg_t - avg_a) - 1.0) * 100.0)


# -- reports -----------------------------------------------------------------

@dataclass
class GainRow:
    gop: int
    role: str
    mode: str
    payload_bytes: int
    psnr_before: float
    psnr_after: float
    decision: str
    frames: Optional[int] = None

    @property
    def gain(self) -> float:
        if math.isinf(self.psnr_before) and math.isinf(self.psnr_after):
            return 0.0
        return self.psnr_after - self.psnr_before


@dataclass
class GainReport:
    rows: list = field(default_factory=list)

    def __iter__(self):
        return iter(self.rows)

    def __len__(self):
        return len(self.rows)

    def for_role(self, role: str) -> list:
        return [r for r in self.rows if r.role == role]

    def mean_gain(self, role: str) -> float:
        rows = self.for_role(role)
        return float(np.mean([r.gain for r in rows])) if rows else 0.0

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_FIELDS)
        for r in self.rows:
            w.writerow([r.gop, r.role, r.mode, r.payload_bytes, _fmt(r.psnr_before),
                        _fmt(r.psnr_after), r.decision])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "GainReport":
        reader = csv.DictReader(io.StringIO(text))
        if tuple(reader.fieldnames or ()) != REPORT_FIELDS:
            raise ValueError(f"report header must be {','.join(REPORT_FIELDS)}")
        rows = [GainRow(int(d["gop"]), d["role"], d["mode"], int(d["payload_bytes"]),
                        float(d["psnr_before"]), float(d["psnr_after"]), d["decision"])
                for d in reader]
        return cls(rows)


def _fmt(x: float) -> str:
    return "inf" if math.isinf(x) else f"{x:.6f}"


def gop_overhead(report: GainReport, gop_len: Optional[int] = None,
                 role: Optional[str] = None) -> list[tuple]:
    """Per-GoP ``(gop, role, bytes_per_frame)`` with payload spread over the GoP's frames.

    Uses each row's frame count when known, otherwise ``gop_len``.
    """
    out = []
    for r in report.rows:
        if role is not None and r.role != role:
            continue
        n = r.frames if r.frames else gop_len
        if not n:
            raise ValueError("frame count unknown: pass gop_len")
        out.append((r.gop, r.role, r.payload_bytes / n))
    return out


def overhead_series(report: GainReport, gop_len: int, role: Optional[str] = None,
                    n_frames: Optional[int] = None) -> list[tuple]:
    """Per-frame ``(frame, bytes)`` summed over roles (or one role)."""
    per_gop = {}
    for gop, _, b in gop_overhead(report, gop_len, role):
        per_gop[gop] = per_gop.get(gop, 0.0) + b
    lengths = {r.gop: r.frames for r in report.rows if r.frames}
    out = []
    frame = 0
    for gop in sorted(per_gop):
        n = lengths.get(gop) or gop_len
        if n_frames is not None:
            n = min(n, n_frames - frame)
        for _ in range(max(n, 0)):
            out.append((frame, per_gop[gop]))
            frame += 1
    return out


def plotdata_csv(series: list[tuple]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("x", "y"))
    for x, y in series:
        w.writerow((x, f"{y:.3f}"))
    return buf.getvalue()


def read_rd_csv(text: str) -> list[RdPoint]:
    reader = csv.DictReader(io.StringIO(text))
    if not reader.fieldnames or not {"rate", "psnr"} <= set(reader.fieldnames):
        raise ValueError("RD csv needs 'rate' and 'psnr' columns")
    return [RdPoint(float(d["rate"]), float(d["psnr"])) for d in reader]
