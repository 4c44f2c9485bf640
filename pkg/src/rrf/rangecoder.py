"""Adaptive multi-symbol range coder.

32-bit low/range with LZMA-style carry propagation (a cached byte plus a run
of pending 0xFF bytes). The always-zero leading byte is not emitted. The
decoder demands that every payload byte is consumed and that the code value
returns to exactly zero, which catches most corruption that still parses.

Integers are binarized as a magnitude class ``bit_length(|v|)`` coded with an
adaptive frequency model, then a raw sign bit and ``class - 1`` raw mantissa
bits below the implicit leading one.
"""

from __future__ import annotations

TOP = 1 << 24
MASK32 = 0xFFFFFFFF
N_CLASSES = 17          # magnitudes up to 2**16 - 1
MAX_TOTAL = 1 << 14
INCREMENT = 32


class DecodeError(ValueError):
    """Payload is malformed or truncated."""


class IntegrityError(DecodeError):
    """Payload parsed but the coder did not end in its terminal state."""


class AdaptiveModel:
    """Frequency table over ``n`` symbols, counts start at 1.

    Each coded symbol adds ``INCREMENT``; all counts are halved (rounding up)
    once the total exceeds ``MAX_TOTAL``.
    """

    def __init__(self, n: int = N_CLASSES):
        if n < 2:
            raise ValueError("a model needs at least two symbols")
        self.freq = [1] * n
        self.total = n

    def interval(self, sym: int):
        f = self.freq
        return sum(f[:sym]), f[sym]

    def lookup(self, target: int):
        cum = 0
        for sym, f in enumerate(self.freq):
            if target < cum + f:
                return sym, cum, f
            cum += f
        raise DecodeError("cumulative frequency out of range")

    def update(self, sym: int):
        self.freq[sym] += INCREMENT
        self.total += INCREMENT
        if self.total > MAX_TOTAL:
            self.freq = [(f + 1) >> 1 for f in self.freq]
            self.total = sum(self.freq)


class RangeEncoder:
    def __init__(self):
        self.low = 0
        self.range = MASK32
        self.cache = 0
        self.cache_size = 1
        self.out = bytearray()
        self._skip_first = True

    def _emit(self, b: int):
        if self._skip_first:
            self._skip_first = False
            return
        self.out.append(b)

    def _shift_low(self):
        if self.low < 0xFF000000 or self.low > MASK32:
            carry = self.low >> 32
            temp = self.cache
            while True:
                self._emit((temp + carry) & 0xFF)
                temp = 0xFF
                self.cache_size -= 1
                if self.cache_size == 0:
                    break
            self.cache = (self.low >> 24) & 0xFF
        self.cache_size += 1
        self.low = (self.low & 0x00FFFFFF) << 8

    def encode(self, cum: int, freq: int, total: int):
        r = self.range // total
        self.low += r * cum
        self.range = r * freq
        while self.range < TOP:
            self.range <<= 8
            self._shift_low()

    def encode_bits(self, value: int, nbits: int):
        # at most 16 bits per call keeps range // total >= 2**8
        while nbits > 0:
            n = min(nbits, 16)
            nbits -= n
            self.encode((value >> nbits) & ((1 << n) - 1), 1, 1 << n)

    def encode_symbol(self, model: AdaptiveModel, sym: int):
        cum, f = model.interval(sym)
        self.encode(cum, f, model.total)
        model.update(sym)

    def encode_int(self, model: AdaptiveModel, v: int):
        mag = abs(v)
        k = mag.bit_length()
        if k >= len(model.freq):
            raise ValueError(f"value {v} exceeds the model's magnitude range")
        self.encode_symbol(model, k)
        if k:
            self.encode_bits(1 if v < 0 else 0, 1)
            self.encode_bits(mag - (1 << (k - 1)), k - 1)

    def finish(self) -> bytes:
        for _ in range(5):
            self._shift_low()
        return bytes(self.out)


class RangeDecoder:
    def __init__(self, data: bytes):
        self.data = bytes(data)
        self.pos = 0
        self.range = MASK32
        self.code = 0
        for _ in range(4):
            self.code = (self.code << 8) | self._next()

    def _next(self) -> int:
        if self.pos >= len(self.data):
            raise DecodeError(f"truncated payload: needed byte at offset {self.pos}, "
                              f"have {len(self.data)}")
        b = self.data[self.pos]
        self.pos += 1
        return b

    def _normalize(self):
        while self.range < TOP:
            self.code = ((self.code << 8) | self._next()) & MASK32
            self.range <<= 8

    def _target(self, total: int) -> int:
        self._r = self.range // total
        v = self.code // self._r
        if v >= total:
            raise DecodeError(f"invalid code value near byte offset {self.pos}")
        return v

    def _consume(self, cum: int, freq: int):
        self.code -= self._r * cum
        self.range = self._r * freq
        self._normalize()

    def decode_bits(self, nbits: int) -> int:
        value = 0
        while nbits > 0:
            n = min(nbits, 16)
            nbits -= n
            v = self._target(1 << n)
            self._consume(v, 1)
            value = (value << n) | v
        return value

    def decode_symbol(self, model: AdaptiveModel) -> int:
        sym, cum, f = model.lookup(self._target(model.total))
        self._consume(cum, f)
        model.update(sym)
        return sym

    def decode_int(self, model: AdaptiveModel) -> int:
        k = self.decode_symbol(model)
        if k == 0:
            return 0
        neg = self.decode_bits(1)
        mag = (1 << (k - 1)) + self.decode_bits(k - 1)
        return -mag if neg else mag

    def finish(self):
        if self.pos != len(self.data):
            raise IntegrityError(f"{len(self.data) - self.pos} trailing bytes after offset {self.pos}")
        if self.code != 0:
            raise IntegrityError("range coder did not end in its terminal state")
