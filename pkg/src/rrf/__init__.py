"""Per-GoP online-trained CNN residual refinement with a compressed parameter sidecar."""

__version__ = "0.1.0"

from .codec import QuantNet, decode_diff, decode_new, dequantize, encode_diff, encode_new, quantize
from .estimator import ResidualCNN, SidecarEncoder
from .metrics import GainReport, GainRow, bd_rate, gop_overhead, psnr
from .network import NetParams, NetSpec, PackConfig, build_net, fold_bn, mac_per_pixel
from .pipeline import EncoderConfig, apply_net_to_frame, decode_sequence, encode_sequence
from .stream import GopUnit, SidecarStream, StreamHeader
from .training import TrainConfig, train_gop
from .yuv import GopSegment, YuvFrame, read_yuv, residual, segment_gops, write_yuv

__all__ = [
    "EncoderConfig", "GainReport", "GainRow", "GopSegment", "GopUnit", "NetParams", "NetSpec",
    "PackConfig", "QuantNet", "ResidualCNN", "SidecarEncoder", "SidecarStream", "StreamHeader",
    "TrainConfig", "YuvFrame", "apply_net_to_frame", "bd_rate", "build_net", "decode_diff",
    "decode_new", "decode_sequence", "dequantize", "encode_diff", "encode_new", "encode_sequence",
    "fold_bn", "gop_overhead", "mac_per_pixel", "psnr", "quantize", "read_yuv", "residual",
    "segment_gops", "train_gop", "write_yuv",
]
