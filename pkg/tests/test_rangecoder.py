import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rrf.rangecoder import (
    AdaptiveModel,
    DecodeError,
    IntegrityError,
    RangeDecoder,
    RangeEncoder,
)


def encode_ints(values, n_models=1):
    enc = RangeEncoder()
    models = [AdaptiveModel() for _ in range(n_models)]
    for i, v in enumerate(values):
        enc.encode_int(models[i % n_models], v)
    return enc.finish()


def decode_ints(data, count, n_models=1):
    dec = RangeDecoder(data)
    models = [AdaptiveModel() for _ in range(n_models)]
    out = [dec.decode_int(models[i % n_models]) for i in range(count)]
    dec.finish()
    return out


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(-(2 ** 16 - 1), 2 ** 16 - 1), max_size=300), st.integers(1, 3))
def test_int_roundtrip(values, n_models):
    assert decode_ints(encode_ints(values, n_models), len(values), n_models) == values


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 2 ** 20 - 1), st.integers(1, 20)), max_size=100))
def test_raw_bits_roundtrip(items):
    items = [(v & ((1 << n) - 1), n) for v, n in items]
    enc = RangeEncoder()
    for v, n in items:
        enc.encode_bits(v, n)
    dec = RangeDecoder(enc.finish())
    assert [dec.decode_bits(n) for _, n in items] == [v for v, _ in items]
    dec.finish()


def test_carry_propagation_heavy_stream():
    # long runs of the most probable symbol push low towards 0xFF.. carries
    rng = np.random.default_rng(0)
    values = [0] * 5000 + rng.integers(-3, 4, 3000).tolist() + [65535, -65535] * 10
    assert decode_ints(encode_ints(values), len(values)) == values


def test_zero_run_is_tiny():
    assert len(encode_ints([0] * 2000)) <= 8


def test_empty_stream_decodes():
    data = RangeEncoder().finish()
    assert decode_ints(data, 0) == []


def test_model_adapts_and_rescales():
    m = AdaptiveModel()
    for _ in range(2000):
        m.update(3)
    assert m.total <= 2 ** 14 and sum(m.freq) == m.total
    assert m.freq[3] > m.total // 2 and min(m.freq) >= 1
    with pytest.raises(ValueError):
        AdaptiveModel(1)


def test_out_of_range_value():
    with pytest.raises(ValueError):
        encode_ints([2 ** 16])


def test_truncation_reports_offset():
    data = encode_ints(list(range(-50, 50)))
    with pytest.raises(DecodeError, match="offset"):
        decode_ints(data[: len(data) // 2], 100)


def test_trailing_bytes_fail_integrity():
    data = encode_ints([1, 2, 3])
    with pytest.raises(IntegrityError):
        decode_ints(data + b"\x00", 3)


def test_corruption_detected():
    rng = np.random.default_rng(5)
    values = rng.integers(-200, 200, 400).tolist()
    data = bytearray(encode_ints(values))
    caught = 0
    for trial in range(40):
        bad = bytearray(data)
        bad[int(rng.integers(0, len(bad)))] ^= 1 << int(rng.integers(0, 8))
        try:
            got = decode_ints(bytes(bad), len(values))
        except DecodeError:
            caught += 1
            continue
        assert got != values or bytes(bad) == bytes(data)
    assert caught >= 30
