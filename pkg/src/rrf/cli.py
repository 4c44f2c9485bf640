"""Command line entry point: ``rrf <subcommand> ...``.

Exit codes: 0 ok, 1 runtime error, 2 usage error. ``RRF_SEED`` overrides
``--seed``. Logs are ``key=value`` lines on stderr.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .metrics import (
    GainReport,
    bd_rate,
    overhead_series,
    plotdata_csv,
    psnr_planes,
    read_rd_csv,
)
from .network import ROLES, PackConfig
from .pipeline import EncoderConfig, decode_sequence, default_jobs, encode_sequence
from .rangecoder import DecodeError
from .stream import SidecarStream, format_table
from .synthetic import KINDS, gen_synthetic
from .yuv import read_yuv, write_yuv

log = logging.getLogger("rrf.cli")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _seed(args) -> int:
    env = os.environ.get("RRF_SEED")
    if env is None or env == "":
        return args.seed
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"RRF_SEED must be an integer, got {env!r}")


def _pack(text: str) -> str:
    try:
        return str(PackConfig.parse(text))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc))


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _roles(text: str) -> tuple:
    roles = tuple(r.strip() for r in text.split(",") if r.strip())
    if not roles or any(r not in ROLES for r in roles):
        raise argparse.ArgumentTypeError(f"roles must be a comma list from {ROLES}")
    return roles


# -- subcommands -------------------------------------------------------------

def run_encode(args) -> int:
    try:
        cfg = EncoderConfig(
            mode=args.mode, gop_len=args.gop, qp=args.qp, b_w=args.b_w, b_b=args.b_b,
            pack_luma=args.pack_luma, pack_chroma=args.pack_chroma, net_width=args.net_width,
            roles=args.roles, iterations=args.iters, patch_size=args.patch_size,
            batch_size=args.batch_size, learning_rate=args.lr, reg_mode=args.reg,
            reg_weight=args.reg_weight, ld_threshold=args.ld_threshold, seed=_seed(args),
            jobs=args.jobs or default_jobs(),
        )
    except ValueError as exc:
        raise UsageError(str(exc))
    decoded = read_yuv(args.decoded, args.width, args.height)
    source = read_yuv(args.source, args.width, args.height)
    stream, report = encode_sequence(decoded, source, cfg)
    Path(args.out).write_bytes(stream.to_bytes())
    config_path = args.config_out or f"{args.out}.json"
    Path(config_path).write_text(cfg.to_json())
    if args.report:
        Path(args.report).write_text(report.to_csv())
    log.info("event=encode_done out=%s units=%d bytes=%d config=%s", args.out, len(stream.units),
             len(stream.to_bytes()), config_path)
    return EXIT_OK


def run_decode(args) -> int:
    stream = SidecarStream.from_bytes(Path(args.stream).read_bytes())
    h = stream.header
    width = args.width or h.width
    height = args.height or h.height
    decoded = read_yuv(args.decoded, width, height)
    out = decode_sequence(decoded, stream)
    write_yuv(out, args.out)
    log.info("event=decode_done out=%s frames=%d", args.out, len(out))
    return EXIT_OK


def run_inspect(args) -> int:
    stream = SidecarStream.from_bytes(Path(args.stream).read_bytes())
    sys.stdout.write(format_table(stream))
    return EXIT_OK


def run_metrics(args) -> int:
    source = read_yuv(args.source, args.width, args.height)
    decoded = read_yuv(args.decoded, args.width, args.height)
    refined = read_yuv(args.refined, args.width, args.height) if args.refined else None
    if len(source) != len(decoded) or (refined is not None and len(refined) != len(source)):
        raise ValueError("input files have different frame counts")
    print("channel,psnr_decoded,psnr_refined,gain")
    for c in ("Y", "U", "V"):
        ref = [f.plane(c) for f in source]
        pd = psnr_planes([f.plane(c) for f in decoded], ref)
        if refined is None:
            print(f"{c},{pd:.4f},,")
        else:
            pr = psnr_planes([f.plane(c) for f in refined], ref)
            print(f"{c},{pd:.4f},{pr:.4f},{pr - pd:.4f}")
    return EXIT_OK


def run_bdrate(args) -> int:
    anchor = read_rd_csv(Path(args.anchor).read_text())
    test = read_rd_csv(Path(args.test).read_text())
    print(f"{bd_rate(anchor, test):.4f}")
    return EXIT_OK


def run_plotdata(args) -> int:
    report = GainReport.from_csv(Path(args.report).read_text())
    role = None if args.role == "all" else args.role
    text = plotdata_csv(overhead_series(report, args.gop, role, args.frames))
    if args.out in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(args.out).write_text(text)
    return EXIT_OK


def run_gen(args) -> int:
    if args.width % 2 or args.height % 2:
        raise UsageError("width and height must be even")
    source, decoded = gen_synthetic(args.kind, args.frames, args.width, args.height, _seed(args),
                                    strength=args.strength, stationary=args.stationary)
    write_yuv(source, args.source_out)
    write_yuv(decoded, args.decoded_out)
    log.info("event=gen_done kind=%s frames=%d size=%dx%d psnr_y=%.4f", args.kind, args.frames,
             args.width, args.height,
             psnr_planes([f.y for f in decoded], [f.y for f in source]))
    return EXIT_OK


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rrf", description="Per-GoP CNN residual refinement sidecar.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--log-level", default="INFO", choices=("DEBUG", "INFO", "WARNING", "ERROR"))
    sub = p.add_subparsers(dest="command", required=True)

    def geometry(sp, required=True):
        sp.add_argument("--width", type=_positive, required=required)
        sp.add_argument("--height", type=_positive, required=required)

    e = sub.add_parser("encode", help="train, test and signal networks per GoP")
    e.add_argument("--decoded", required=True)
    e.add_argument("--source", required=True)
    geometry(e)
    e.add_argument("--gop", type=_positive, default=32)
    e.add_argument("--mode", choices=("ra", "ld"), default="ra")
    e.add_argument("--qp", type=float, default=None, help="selects b_w (22:10 27:9 32:7 37:6)")
    e.add_argument("--b-w", dest="b_w", type=int, default=None, help="weight bits, overrides --qp")
    e.add_argument("--b-b", dest="b_b", type=int, default=10)
    e.add_argument("--pack-luma", type=_pack, default="1x1")
    e.add_argument("--pack-chroma", type=_pack, default="1x1")
    e.add_argument("--net-width", type=_positive, default=12)
    e.add_argument("--roles", type=_roles, default=ROLES, help="e.g. luma or luma,chroma")
    e.add_argument("--iters", type=_positive, default=1000)
    e.add_argument("--patch-size", type=_positive, default=48)
    e.add_argument("--batch-size", type=_positive, default=64)
    e.add_argument("--lr", type=float, default=0.02)
    e.add_argument("--reg", choices=("l2", "temporal", "none"), default=None,
                   help="default: l2 for ra, temporal for ld")
    e.add_argument("--reg-weight", type=float, default=None)
    e.add_argument("--ld-threshold", type=float, default=1.1)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--jobs", type=_positive, default=None, help="parallel GoPs in ra mode")
    e.add_argument("--out", required=True)
    e.add_argument("--report")
    e.add_argument("--config-out", help="reproducibility JSON (default: OUT.json)")
    e.set_defaults(func=run_encode)

    d = sub.add_parser("decode", help="apply a sidecar stream to decoded video")
    d.add_argument("--decoded", required=True)
    d.add_argument("--stream", required=True)
    d.add_argument("--out", required=True)
    geometry(d, required=False)
    d.set_defaults(func=run_decode)

    i = sub.add_parser("inspect", help="print the unit table of a stream")
    i.add_argument("stream")
    i.set_defaults(func=run_inspect)

    m = sub.add_parser("metrics", help="per-channel PSNR of decoded (and refined) video")
    m.add_argument("--source", required=True)
    m.add_argument("--decoded", required=True)
    m.add_argument("--refined")
    geometry(m)
    m.set_defaults(func=run_metrics)

    b = sub.add_parser("bdrate", help="BD-rate of test vs anchor RD csv files (rate,psnr)")
    b.add_argument("--anchor", required=True)
    b.add_argument("--test", required=True)
    b.set_defaults(func=run_bdrate)

    pd = sub.add_parser("plotdata", help="per-frame sidecar overhead as x,y csv")
    pd.add_argument("--report", required=True)
    pd.add_argument("--gop", type=_positive, required=True)
    pd.add_argument("--frames", type=_positive)
    pd.add_argument("--role", choices=ROLES + ("all",), default="all")
    pd.add_argument("--out")
    pd.set_defaults(func=run_plotdata)

    g = sub.add_parser("gen", help="synthetic source/decoded clip pair")
    g.add_argument("--kind", choices=KINDS, default="blur")
    g.add_argument("--frames", type=_positive, default=8)
    geometry(g)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--strength", type=float)
    g.add_argument("--stationary", action="store_true")
    g.add_argument("--source-out", required=True)
    g.add_argument("--decoded-out", required=True)
    g.set_defaults(func=run_gen)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level), stream=sys.stderr,
                        format="level=%(levelname)s logger=%(name)s %(message)s", force=True)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"rrf: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError, DecodeError, RuntimeError, FloatingPointError) as exc:
        print(f"rrf: error: {exc}", file=sys.stderr)
        log.error("event=failed command=%s error=%s", args.command, type(exc).__name__)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
