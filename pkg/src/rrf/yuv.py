"""Raw planar YUV420 (I420) I/O, GoP segmentation and residual planes."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

CHANNELS = ("Y", "U", "V")


@dataclass(frozen=True)
class YuvFrame:
    """One 8-bit 4:2:0 picture. ``y`` is H x W, ``u``/``v`` are H/2 x W/2."""

    y: np.ndarray
    u: np.ndarray
    v: np.ndarray
    index: int = 0

    def __post_init__(self):
        h, w = self.y.shape
        if h % 2 or w % 2:
            raise ValueError(f"frame dimensions must be even, got {w}x{h}")
        for name in ("u", "v"):
            plane = getattr(self, name)
            if plane.shape != (h // 2, w // 2):
                raise ValueError(
                    f"{name} plane is {plane.shape}, expected {(h // 2, w // 2)}"
                )
        for name in ("y", "u", "v"):
            if getattr(self, name).dtype != np.uint8:
                raise ValueError(f"{name} plane must be uint8")

    @property
    def width(self) -> int:
        return self.y.shape[1]

    @property
    def height(self) -> int:
        return self.y.shape[0]

    def plane(self, channel: str) -> np.ndarray:
        return {"Y": self.y, "U": self.u, "V": self.v}[channel]

    def __eq__(self, other):
        if not isinstance(other, YuvFrame):
            return NotImplemented
        return (
            self.index == other.index
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.u, other.u)
            and np.array_equal(self.v, other.v)
        )

    __hash__ = None

    def tobytes(self) -> bytes:
        return self.y.tobytes() + self.u.tobytes() + self.v.tobytes()


def frame_size(width: int, height: int) -> int:
    return width * height * 3 // 2


def _check_dims(width: int, height: int):
    if width <= 0 or height <= 0 or width % 2 or height % 2:
        raise ValueError(f"width and height must be positive and even, got {width}x{height}")


def frames_from_bytes(data: bytes, width: int, height: int) -> list[YuvFrame]:
    _check_dims(width, height)
    fsize = frame_size(width, height)
    if len(data) % fsize:
        offset = len(data) - len(data) % fsize
        raise OSError(
            f"truncated YUV data: {len(data)} bytes is not a multiple of the "
            f"{fsize}-byte frame size; partial frame starts at byte offset {offset}"
        )
    buf = np.frombuffer(data, dtype=np.uint8)
    ysize = width * height
    csize = ysize // 4
    frames = []
    for i in range(len(data) // fsize):
        base = i * fsize
        y = buf[base:base + ysize].reshape(height, width).copy()
        u = buf[base + ysize:base + ysize + csize].reshape(height // 2, width // 2).copy()
        v = buf[base + ysize + csize:base + fsize].reshape(height // 2, width // 2).copy()
        frames.append(YuvFrame(y, u, v, i))
    return frames


def read_yuv(path, width: int, height: int) -> list[YuvFrame]:
    """Read every frame of a headerless I420 file."""
    _check_dims(width, height)
    with open(path, "rb") as fh:
        data = fh.read()
    return frames_from_bytes(data, width, height)


def write_yuv(frames: Sequence[YuvFrame], path) -> None:
    frames = list(frames)
    if frames:
        dims = {(f.width, f.height) for f in frames}
        if len(dims) != 1:
            raise ValueError(f"frames have mixed dimensions: {sorted(dims)}")
    tmp = os.fspath(path)
    with open(tmp, "wb") as fh:
        for f in frames:
            fh.write(f.tobytes())


@dataclass
class GopSegment:
    decoded: list[YuvFrame]
    source: list[YuvFrame]
    start: int
    mode: str = "ra"
    length: int = field(init=False)

    def __post_init__(self):
        if len(self.decoded) != len(self.source):
            raise ValueError("decoded and source GoP lengths differ")
        if not self.decoded:
            raise ValueError("empty GoP")
        for d, s in zip(self.decoded, self.source):
            if d.y.shape != s.y.shape:
                raise ValueError("decoded/source dimension mismatch inside GoP")
        self.length = len(self.decoded)

    def stack(self, channel: str, which: str = "decoded") -> np.ndarray:
        frames = self.decoded if which == "decoded" else self.source
        return np.stack([f.plane(channel) for f in frames])


def segment_gops(
    decoded: Sequence[YuvFrame],
    source: Sequence[YuvFrame],
    gop_len: int,
    mode: str = "ra",
) -> list[GopSegment]:
    if len(decoded) != len(source):
        raise ValueError(
            f"decoded has {len(decoded)} frames but source has {len(source)}"
        )
    if gop_len < 1:
        raise ValueError("gop_len must be >= 1")
    return [
        GopSegment(list(decoded[s:s + gop_len]), list(source[s:s + gop_len]), s, mode)
        for s in range(0, len(decoded), gop_len)
    ]


def residual(source: YuvFrame, decoded: YuvFrame, channel: str) -> np.ndarray:
    """Signed ``source - decoded`` for one channel as float32."""
    s, d = source.plane(channel), decoded.plane(channel)
    if s.shape != d.shape:
        raise ValueError(f"plane shapes differ: {s.shape} vs {d.shape}")
    return s.astype(np.float32) - d.astype(np.float32)
