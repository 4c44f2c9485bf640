"""Sidecar container: a 16-byte header followed by length-prefixed GoP units.

Header (little endian)::

    0  4s  magic "RRF1"
    4  u8  version (1)
    5  u8  coding mode in bits 0-3 (0 = RA, 1 = LD), role mask in bits 4-5
           (bit 4 luma, bit 5 chroma)
    6  u16 width
    8  u16 height
    10 u16 gop length
    12 u8  hidden width of the networks
    13 u8  pack configs: bit 0 luma P_H-1, bit 1 luma P_W-1,
           bit 2 chroma P_H-1, bit 3 chroma P_W-1
    14 u8  default weight bits
    15 u8  default bias bits

Unit::

    0  u8  mode in bits 0-3 (0 SKIP, 1 NEW, 2 DIFF), role in bits 4-7 (0 luma, 1 chroma)
    1  u8  pack: bit 0 P_H-1, bit 1 P_W-1
    2  u8  weight bits
    3  u8  bias bits
    4  u16 payload length
    6  ... payload

Units appear per GoP in role order (luma, then chroma), active roles only.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

from .network import ROLES, PackConfig
from .rangecoder import DecodeError, IntegrityError

MAGIC = b"RRF1"
VERSION = 1
HEADER = struct.Struct("<4sBBHHHBBBB")
UNIT = struct.Struct("<BBBBH")
CODING_MODES = ("ra", "ld")
UNIT_MODES = ("SKIP", "NEW", "DIFF")

assert HEADER.size == 16


def _pack_bits(cfg: PackConfig) -> int:
    return (cfg.ph - 1) | ((cfg.pw - 1) << 1)


def _unpack_bits(b: int) -> PackConfig:
    return PackConfig(1 + (b & 1), 1 + ((b >> 1) & 1))


@dataclass(frozen=True)
class StreamHeader:
    mode: str
    width: int
    height: int
    gop_len: int
    roles: tuple = ROLES
    net_width: int = 12
    pack_luma: PackConfig = PackConfig(1, 1)
    pack_chroma: PackConfig = PackConfig(1, 1)
    b_w: int = 9
    b_b: int = 10

    def __post_init__(self):
        if self.mode not in CODING_MODES:
            raise ValueError(f"mode must be one of {CODING_MODES}")
        if not self.roles or any(r not in ROLES for r in self.roles):
            raise ValueError(f"roles must be a non-empty subset of {ROLES}")
        object.__setattr__(self, "roles", tuple(r for r in ROLES if r in self.roles))
        for name, v, hi in [("width", self.width, 0xFFFF), ("height", self.height, 0xFFFF),
                            ("gop_len", self.gop_len, 0xFFFF), ("net_width", self.net_width, 0xFF)]:
            if not 1 <= v <= hi:
                raise ValueError(f"{name} out of range: {v}")

    def pack_for(self, role: str) -> PackConfig:
        return self.pack_luma if role == "luma" else self.pack_chroma

    def to_bytes(self) -> bytes:
        mask = sum(1 << i for i, r in enumerate(ROLES) if r in self.roles)
        packs = _pack_bits(self.pack_luma) | (_pack_bits(self.pack_chroma) << 2)
        return HEADER.pack(MAGIC, VERSION, CODING_MODES.index(self.mode) | (mask << 4),
                           self.width, self.height, self.gop_len, self.net_width, packs,
                           self.b_w, self.b_b)

    @classmethod
    def from_bytes(cls, data: bytes) -> "StreamHeader":
        if len(data) < HEADER.size:
            raise DecodeError(f"stream shorter than the {HEADER.size}-byte header")
        magic, ver, mm, w, h, gop, nw, packs, bw, bb = HEADER.unpack_from(data)
        if magic != MAGIC:
            raise DecodeError(f"bad magic {magic!r}")
        if ver != VERSION:
            raise DecodeError(f"unsupported version {ver}")
        mode, mask = mm & 0xF, mm >> 4
        if mode >= len(CODING_MODES) or mask == 0 or mask > 3:
            raise DecodeError("invalid mode/role byte at offset 5")
        try:
            return cls(CODING_MODES[mode], w, h, gop, tuple(r for i, r in enumerate(ROLES) if mask >> i & 1),
                       nw, _unpack_bits(packs), _unpack_bits(packs >> 2), bw, bb)
        except ValueError as exc:
            raise DecodeError(f"invalid header: {exc}") from exc


@dataclass(frozen=True)
class GopUnit:
    mode: str
    role: str
    pack: PackConfig
    b_w: int
    b_b: int
    payload: bytes = b""

    def __post_init__(self):
        if self.mode not in UNIT_MODES:
            raise ValueError(f"unit mode must be one of {UNIT_MODES}")
        if self.role not in ROLES:
            raise ValueError(f"role must be one of {ROLES}")
        if self.mode == "SKIP" and self.payload:
            raise ValueError("SKIP units carry no payload")
        if self.mode != "SKIP" and not self.payload:
            raise ValueError(f"{self.mode} unit needs a payload")
        if len(self.payload) > 0xFFFF:
            raise ValueError("payload longer than 65535 bytes")

    @property
    def payload_len(self) -> int:
        return len(self.payload)

    def to_bytes(self) -> bytes:
        head = UNIT.pack(UNIT_MODES.index(self.mode) | (ROLES.index(self.role) << 4),
                         _pack_bits(self.pack), self.b_w, self.b_b, len(self.payload))
        return head + self.payload


@dataclass
class SidecarStream:
    header: StreamHeader
    units: list = field(default_factory=list)

    def to_bytes(self) -> bytes:
        return self.header.to_bytes() + b"".join(u.to_bytes() for u in self.units)

    @classmethod
    def from_bytes(cls, data: bytes) -> "SidecarStream":
        header = StreamHeader.from_bytes(data)
        units = []
        pos = HEADER.size
        while pos < len(data):
            if pos + UNIT.size > len(data):
                raise DecodeError(f"truncated unit header at byte offset {pos}")
            mr, pk, bw, bb, n = UNIT.unpack_from(data, pos)
            mode, role = mr & 0xF, mr >> 4
            if mode >= len(UNIT_MODES) or role >= len(ROLES) or pk > 3:
                raise DecodeError(f"invalid unit header at byte offset {pos}")
            start = pos + UNIT.size
            if start + n > len(data):
                raise DecodeError(f"truncated payload at byte offset {len(data)}, "
                                  f"unit at {pos} declares {n} bytes")
            try:
                units.append(GopUnit(UNIT_MODES[mode], ROLES[role], _unpack_bits(pk), bw, bb,
                                     bytes(data[start:start + n])))
            except ValueError as exc:
                raise DecodeError(f"invalid unit at byte offset {pos}: {exc}") from exc
            pos = start + n
        stream = cls(header, units)
        stream.check_order()
        return stream

    def check_order(self):
        """Units must cycle through the active roles; RA forbids DIFF; DIFF needs a predecessor."""
        roles = self.header.roles
        seen = set()
        for i, u in enumerate(self.units):
            want = roles[i % len(roles)]
            if u.role != want:
                raise DecodeError(f"unit {i} has role {u.role}, expected {want}")
            if u.mode == "DIFF":
                if self.header.mode == "ra":
                    raise IntegrityError(f"unit {i}: DIFF is not allowed in random access streams")
                if u.role not in seen:
                    raise IntegrityError(f"unit {i}: DIFF without a previous {u.role} unit")
            if u.mode != "SKIP":
                seen.add(u.role)
        if len(self.units) % len(roles):
            raise DecodeError("unit count is not a multiple of the active role count")

    @property
    def n_gops(self) -> int:
        return len(self.units) // len(self.header.roles)

    def gop_units(self, gop: int) -> dict:
        k = len(self.header.roles)
        return {u.role: u for u in self.units[gop * k:(gop + 1) * k]}

    def table(self) -> list[dict]:
        k = len(self.header.roles)
        return [{"gop": i // k, "role": u.role, "mode": u.mode, "pack": str(u.pack),
                 "b_w": u.b_w, "b_b": u.b_b, "payload_bytes": u.payload_len}
                for i, u in enumerate(self.units)]


def format_table(stream: SidecarStream) -> str:
    h = stream.header
    lines = [f"# mode={h.mode} size={h.width}x{h.height} gop={h.gop_len} roles={','.join(h.roles)} "
             f"width={h.net_width} pack_luma={h.pack_luma} pack_chroma={h.pack_chroma} "
             f"b_w={h.b_w} b_b={h.b_b}",
             "gop\trole\tmode\tpack\tb_w\tb_b\tpayload_bytes"]
    for r in stream.table():
        lines.append("\t".join(str(r[k]) for k in ("gop", "role", "mode", "pack", "b_w", "b_b",
                                                   "payload_bytes")))
    return "\n".join(lines) + "\n"
