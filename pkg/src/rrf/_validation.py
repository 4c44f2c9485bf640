"""Input checks shared by the estimators and the CLI."""

from __future__ import annotations

from typing import Sequence

import numpy as np
from sklearn.utils.validation import check_is_fitted

from .network import ROLES, PackConfig
from .yuv import YuvFrame


def check_role(role: str) -> str:
    if role not in ROLES:
        raise ValueError(f"role must be one of {ROLES}, got {role!r}")
    return role


def check_pack(pack) -> PackConfig:
    if isinstance(pack, PackConfig):
        return pack
    if isinstance(pack, str):
        return PackConfig.parse(pack)
    if isinstance(pack, (tuple, list)) and len(pack) == 2:
        return PackConfig(int(pack[0]), int(pack[1]))
    raise ValueError(f"cannot interpret pack config {pack!r}")


def check_planes(X, role: str, name: str = "X") -> np.ndarray:
    """uint8 plane stack: ``(n, H, W)`` for luma, ``(n, 2, H, W)`` for chroma.

    A single luma plane ``(H, W)`` or chroma pair ``(2, H, W)`` is promoted
    to a stack of one.
    """
    check_role(role)
    arr = np.asarray(X)
    if arr.dtype != np.uint8:
        if not np.issubdtype(arr.dtype, np.integer) or arr.size and (arr.min() < 0 or arr.max() > 255):
            raise ValueError(f"{name} must hold 8-bit samples")
        arr = arr.astype(np.uint8)
    want = 3 if role == "luma" else 4
    if arr.ndim == want - 1:
        arr = arr[None]
    if arr.ndim != want:
        raise ValueError(f"{name} for {role} must have {want} dims, got shape {arr.shape}")
    if role == "chroma" and arr.shape[1] != 2:
        raise ValueError(f"{name} for chroma must stack U and V on axis 1")
    if arr.shape[0] < 1 or min(arr.shape[-2:]) < 1:
        raise ValueError(f"{name} is empty")
    return arr


def check_pair(X, y, role: str):
    X = check_planes(X, role, "X")
    y = check_planes(y, role, "y")
    if X.shape != y.shape:
        raise ValueError(f"X and y shapes differ: {X.shape} vs {y.shape}")
    return X, y


def split_role(arr: np.ndarray, role: str) -> list[np.ndarray]:
    """Plane stacks per channel in the form the trainer expects."""
    return [arr] if role == "luma" else [arr[:, 0], arr[:, 1]]


def check_frames(frames: Sequence, name: str = "frames") -> list:
    frames = list(frames)
    if not frames:
        raise ValueError(f"{name} is empty")
    for f in frames:
        if not isinstance(f, YuvFrame):
            raise TypeError(f"{name} must contain YuvFrame objects, got {type(f).__name__}")
    shape = frames[0].y.shape
    if any(f.y.shape != shape for f in frames):
        raise ValueError(f"{name} mix frame dimensions")
    return frames


def check_frame_pair(decoded: Sequence, source: Sequence):
    decoded = check_frames(decoded, "decoded")
    source = check_frames(source, "source")
    if len(decoded) != len(source):
        raise ValueError(f"decoded has {len(decoded)} frames, source has {len(source)}")
    if decoded[0].y.shape != source[0].y.shape:
        raise ValueError("decoded and source dimensions differ")
    return decoded, source


__all__ = ["check_frame_pair", "check_frames", "check_is_fitted", "check_pack", "check_pair",
           "check_planes", "check_role", "split_role"]
