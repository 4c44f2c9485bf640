import hashlib

import numpy as np
import pytest
from conftest import random_frames

from rrf.yuv import YuvFrame, frame_size, read_yuv, residual, segment_gops, write_yuv


def test_two_frame_4x4_file(tmp_path):
    p = tmp_path / "a.yuv"
    p.write_bytes(bytes(range(48)))
    frames = read_yuv(p, 4, 4)
    assert len(frames) == 2
    f = frames[0]
    assert f.y.size == 16 and f.u.size == 4 and f.v.size == 4
    assert f.y.ravel().tolist() == list(range(16))
    assert f.u.ravel().tolist() == list(range(16, 20))
    assert frames[1].v.ravel().tolist() == list(range(44, 48))
    assert [f.index for f in frames] == [0, 1]


def test_all_zero_file(tmp_path):
    p = tmp_path / "z.yuv"
    p.write_bytes(bytes(frame_size(8, 6) * 3))
    for f in read_yuv(p, 8, 6):
        assert not f.y.any() and not f.u.any() and not f.v.any()


def test_truncated_file_names_offset(tmp_path):
    p = tmp_path / "t.yuv"
    p.write_bytes(bytes(47))
    with pytest.raises(OSError, match="offset 24"):
        read_yuv(p, 4, 4)


def test_odd_dimensions_rejected(tmp_path):
    p = tmp_path / "o.yuv"
    p.write_bytes(bytes(100))
    with pytest.raises(ValueError):
        read_yuv(p, 5, 4)


def test_roundtrip_hash(tmp_path):
    frames = random_frames(5, 16, 10, seed=3)
    p = tmp_path / "r.yuv"
    write_yuv(frames, p)
    raw = p.read_bytes()
    assert hashlib.sha256(raw).digest() == hashlib.sha256(b"".join(f.tobytes() for f in frames)).digest()
    back = read_yuv(p, 16, 10)
    assert back == frames
    q = tmp_path / "r2.yuv"
    write_yuv(back, q)
    assert q.read_bytes() == raw


def test_empty_sequence_writes_empty_file(tmp_path):
    p = tmp_path / "e.yuv"
    write_yuv([], p)
    assert p.read_bytes() == b""


def test_mixed_dimensions_rejected(tmp_path):
    frames = random_frames(1, 8, 8) + random_frames(1, 16, 8)
    with pytest.raises(ValueError):
        write_yuv(frames, tmp_path / "m.yuv")


def test_unwritable_path(tmp_path):
    with pytest.raises(OSError):
        write_yuv(random_frames(1, 4, 4), tmp_path / "missing" / "x.yuv")


def test_frame_invariants():
    with pytest.raises(ValueError):
        YuvFrame(np.zeros((4, 4), np.uint8), np.zeros((2, 2), np.uint8), np.zeros((2, 3), np.uint8), 0)
    with pytest.raises(ValueError):
        YuvFrame(np.zeros((4, 4), np.int16), np.zeros((2, 2), np.uint8), np.zeros((2, 2), np.uint8), 0)


@pytest.mark.parametrize("n,gop,lengths", [(10, 4, [4, 4, 2]), (32, 32, [32]), (5, 1, [1] * 5)])
def test_segment_gops(n, gop, lengths):
    frames = random_frames(n, 4, 4)
    segs = segment_gops(frames, frames, gop)
    assert [s.length for s in segs] == lengths
    covered = [f.index for s in segs for f in s.decoded]
    assert covered == list(range(n))
    assert [s.start for s in segs] == list(range(0, n, gop))


def test_segment_length_mismatch():
    with pytest.raises(ValueError):
        segment_gops(random_frames(3, 4, 4), random_frames(2, 4, 4), 2)
    with pytest.raises(ValueError):
        segment_gops(random_frames(3, 4, 4), random_frames(3, 4, 4), 0)


def test_residual_cases():
    src = YuvFrame(np.full((4, 4), 200, np.uint8), np.full((2, 2), 200, np.uint8),
                   np.full((2, 2), 200, np.uint8), 0)
    dec = YuvFrame(np.full((4, 4), 180, np.uint8), np.full((2, 2), 180, np.uint8),
                   np.full((2, 2), 180, np.uint8), 0)
    assert np.all(residual(src, dec, "Y") == 20)
    assert not residual(src, src, "U").any()


def test_residual_matches_loop_oracle():
    a, b = random_frames(2, 8, 6, seed=9)
    r = residual(a, b, "V")
    for i in range(r.shape[0]):
        for j in range(r.shape[1]):
            assert r[i, j] == int(a.v[i, j]) - int(b.v[i, j])
    assert np.all(np.abs(r) <= 255)
    assert np.array_equal((r + b.v).astype(np.uint8), a.v)


def test_residual_dimension_mismatch():
    a = random_frames(1, 8, 6)[0]
    b = random_frames(1, 8, 8)[0]
    with pytest.raises(ValueError):
        residual(a, b, "Y")
