"""scikit-learn style front ends.

``ResidualCNN`` fits one refinement network on plane stacks of one role;
``SidecarEncoder`` runs the full per-GoP encoder on frame sequences and
decodes its own stream in ``transform``.
"""

from __future__ import annotations

from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import (
    check_frame_pair,
    check_frames,
    check_is_fitted,
    check_pack,
    check_pair,
    check_planes,
    check_role,
    split_role,
)
from .codec import dequantize, encode_new, quantize
from .metrics import psnr_planes
from .network import NetSpec, fold_bn, prune_constant_channels
from .pipeline import EncoderConfig, decode_sequence, encode_sequence, refine_planes
from .training import TrainConfig, role_data, train_role


class ResidualCNN(BaseEstimator, TransformerMixin):
    """Online-trained residual refiner for one role.

    ``X`` holds decoded planes and ``y`` the matching source planes, as uint8
    stacks ``(n, H, W)`` for luma or ``(n, 2, H, W)`` (U, V) for chroma.
    With ``b_w`` set, prediction uses the quantized network a decoder would
    reconstruct; otherwise the folded float network.
    """

    def __init__(self, role="luma", pack="1x1", width=12, iterations=1000, patch_size=48,
                 batch_size=64, learning_rate=0.02, reg_mode="l2", reg_weight=None,
                 b_w=None, b_b=10, warm_start=False, random_state=0):
        self.role = role
        self.pack = pack
        self.width = width
        self.iterations = iterations
        self.patch_size = patch_size
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.reg_mode = reg_mode
        self.reg_weight = reg_weight
        self.b_w = b_w
        self.b_b = b_b
        self.warm_start = warm_start
        self.random_state = random_state

    def _spec(self) -> NetSpec:
        return NetSpec(check_role(self.role), check_pack(self.pack), int(self.width))

    def fit(self, X, y):
        X, y = check_pair(X, y, self.role)
        spec = self._spec()
        cfg = TrainConfig(self.patch_size, self.batch_size, self.iterations, self.learning_rate,
                          self.reg_mode, self.reg_weight, int(self.random_state or 0))
        prev = prev_opt = None
        if self.warm_start and getattr(self, "net_", None) is not None:
            if self.net_.spec != spec:
                raise ValueError("warm_start needs the same role, pack and width")
            prev, prev_opt = self.net_, self.optimizer_
        data = role_data(split_role(X, self.role), split_role(y, self.role), spec)
        outcome = train_role(data, spec, cfg, prev, prev_opt)
        self.net_ = outcome.net
        self.optimizer_ = outcome.optimizer
        self.loss_curve_ = list(outcome.loss_trace)
        self.n_iter_ = len(self.loss_curve_)
        self.skipped_ = outcome.skipped
        self.fallback_ = outcome.fallback
        self.quant_ = None
        self.folded_ = None
        if outcome.net is not None:
            self.folded_ = fold_bn(prune_constant_channels(outcome.net))
            if self.b_w is not None:
                self.quant_ = quantize(self.folded_, self.b_w, self.b_b)
                self.folded_ = dequantize(self.quant_)
        return self

    @property
    def payload_(self) -> Optional[bytes]:
        check_is_fitted(self, "net_")
        return None if self.quant_ is None else encode_new(self.quant_)

    def predict(self, X) -> np.ndarray:
        """Refined uint8 planes, same layout as ``X``."""
        check_is_fitted(self, "net_")
        X = check_planes(X, self.role)
        if self.folded_ is None:
            return X.copy()
        out = refine_planes(self.folded_, split_role(X, self.role))
        return out[0] if self.role == "luma" else np.stack(out, axis=1)

    def transform(self, X) -> np.ndarray:
        return self.predict(X)

    def score(self, X, y) -> float:
        """PSNR gain in dB of the refined planes over ``X``, measured against ``y``."""
        X, y = check_pair(X, y, self.role)
        return psnr_planes([self.predict(X)], [y]) - psnr_planes([X], [y])


class SidecarEncoder(BaseEstimator, TransformerMixin):
    """Sequence encoder producing a sidecar stream; ``transform`` applies it.

    ``fit(decoded, source)`` takes lists of ``YuvFrame``.
    """

    def __init__(self, mode="ra", gop_len=32, qp=None, b_w=None, b_b=10, pack_luma="1x1",
                 pack_chroma="1x1", net_width=12, roles=("luma", "chroma"), iterations=1000,
                 patch_size=48, batch_size=64, learning_rate=0.02, reg_mode=None,
                 reg_weight=None, ld_threshold=1.1, random_state=0, n_jobs=1):
        self.mode = mode
        self.gop_len = gop_len
        self.qp = qp
        self.b_w = b_w
        self.b_b = b_b
        self.pack_luma = pack_luma
        self.pack_chroma = pack_chroma
        self.net_width = net_width
        self.roles = roles
        self.iterations = iterations
        self.patch_size = patch_size
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.reg_mode = reg_mode
        self.reg_weight = reg_weight
        self.ld_threshold = ld_threshold
        self.random_state = random_state
        self.n_jobs = n_jobs

    def _config(self) -> EncoderConfig:
        return EncoderConfig(
            mode=self.mode, gop_len=self.gop_len, qp=self.qp, b_w=self.b_w, b_b=self.b_b,
            pack_luma=str(check_pack(self.pack_luma)), pack_chroma=str(check_pack(self.pack_chroma)),
            net_width=self.net_width, roles=tuple(self.roles), iterations=self.iterations,
            patch_size=self.patch_size, batch_size=self.batch_size,
            learning_rate=self.learning_rate, reg_mode=self.reg_mode, reg_weight=self.reg_weight,
            ld_threshold=self.ld_threshold, seed=int(self.random_state or 0),
            jobs=int(self.n_jobs or 1),
        )

    def fit(self, X, y):
        decoded, source = check_frame_pair(X, y)
        self.config_ = self._config()
        self.stream_, self.report_ = encode_sequence(decoded, source, self.config_)
        return self

    def transform(self, X) -> list:
        check_is_fitted(self, "stream_")
        return decode_sequence(check_frames(X, "decoded"), self.stream_)

    def to_bytes(self) -> bytes:
        check_is_fitted(self, "stream_")
        return self.stream_.to_bytes()

    def score(self, X, y) -> float:
        """Mean PSNR gain in dB over all GoPs and roles of the fitted stream."""
        check_is_fitted(self, "report_")
        decoded, source = check_frame_pair(X, y)
        refined = self.transform(decoded)
        gains = []
        for role, chans in (("luma", ("Y",)), ("chroma", ("U", "V"))):
            if role not in self.config_.roles:
                continue
            ref = [f.plane(c) for f in source for c in chans]
            gains.append(psnr_planes([f.plane(c) for f in refined for c in chans], ref)
                         - psnr_planes([f.plane(c) for f in decoded for c in chans], ref))
        return float(np.mean(gains))
