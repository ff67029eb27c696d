"""Command-line entry point (``sparse-ncnet``)."""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

from . import __version__
from .bench import memory_report
from .corr import CorrConfig
from .featio import extract_patch_descriptors, load_feature_map, read_grayscale, save_feature_map
from .mma import PairEvaluation, load_homography, mma_sweep_report, parse_thresholds
from .pipeline import PipelineConfig, format_matches_csv, match_pair_detailed, match_report, read_matches_csv
from .reloc import MODES, RelocConfig


def _int_at_least(lo):
    def parse(s):
        try:
            v = int(s)
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected an integer, got {s!r}")
        if v < lo:
            raise argparse.ArgumentTypeError(f"must be >= {lo}, got {v}")
        return v

    return parse


def _positive_float(s):
    try:
        v = float(s)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {s!r}")
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {s}")
    return v


def resolve_threads(flag: int | None) -> int:
    if flag is not None:
        return flag
    env = os.environ.get("SNC_THREADS")
    if env:
        try:
            v = int(env)
        except ValueError:
            raise SystemExit(f"error: SNC_THREADS must be a positive integer, got {env!r}")
        if v < 1:
            raise SystemExit(f"error: SNC_THREADS must be a positive integer, got {env!r}")
        return v
    return os.cpu_count() or 1


def metric(key: str, value) -> None:
    print(f"#metric {key}={value}", file=sys.stderr)


def _write_text(path, text: str) -> None:
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w", newline="") as fh:
            fh.write(text)


def cmd_extract(args) -> int:
    fmap = extract_patch_descriptors(read_grayscale(args.image), args.patch, args.stride)
    save_feature_map(fmap, args.out)
    metric("height", fmap.h)
    metric("width", fmap.w)
    metric("channels", fmap.c)
    return 0


def _pipeline_config(args) -> PipelineConfig:
    return PipelineConfig(
        corr=CorrConfig(args.k),
        reloc=RelocConfig(args.temperature, args.reloc, args.temperature_mode),
        top_n=args.top_n,
        weights_path=args.weights,
        seed=args.seed,
        threads=resolve_threads(args.threads),
    )


def cmd_match(args) -> int:
    cfg = _pipeline_config(args)
    t0 = time.perf_counter()
    res = match_pair_detailed(load_feature_map(args.feat_a), load_feature_map(args.feat_b), cfg)
    _write_text(args.out, format_matches_csv(res.matches))
    s = res.stats
    metric("wall_time_s", f"{time.perf_counter() - t0:.6f}")
    metric("peak_sites", s.sites)
    metric("site_bound", s.site_bound)
    metric("storage_bytes", s.storage_bytes)
    metric("aligned_storage_bytes", s.aligned_storage_bytes)
    metric("dense_equivalent_bytes", s.dense_equivalent_bytes)
    metric("matches", s.matches)
    metric("threads", cfg.threads)
    return 0


def cmd_eval_mma(args) -> int:
    rows = read_matches_csv(args.matches)
    if not rows:
        print("error: match file contains no matches", file=sys.stderr)
        return 2
    thresholds = parse_thresholds(args.thresholds)
    pair = PairEvaluation(args.pair_id or os.path.basename(args.matches), rows, load_homography(args.homography))
    _write_text(args.out, mma_sweep_report([pair], thresholds))
    return 0


def cmd_selfcheck(args) -> int:
    from .oracles import selfcheck

    failures = selfcheck(args.seed, args.instances, args.tolerance)
    for f in failures:
        print(f"FAIL {f}", file=sys.stderr)
    metric("instances", args.instances)
    metric("failures", len(failures))
    return 1 if failures else 0


def cmd_bench(args) -> int:
    r = memory_report(args.ha, args.wa, args.hb, args.wb, args.k, args.sites)
    for key, value in r.items():
        if isinstance(value, tuple):
            value = "x".join(map(str, value))
        elif isinstance(value, float):
            value = f"{value:.4f}"
        print(f"{key}={value}")
    return 0


def cmd_report(args) -> int:
    if len(args.features) % 2:
        print("error: report needs an even number of feature files (A B A B ...)", file=sys.stderr)
        return 2
    pairs = list(zip(args.features[::2], args.features[1::2]))
    report = match_report(pairs, _pipeline_config(args))
    _write_text(args.out, json.dumps(report, indent=2) + "\n")
    return 0


def _add_match_options(p):
    p.add_argument("--weights", help="SNCW weights file (default: seeded random network)")
    p.add_argument("--k", type=_int_at_least(1), default=10, help="neighbours per feature")
    p.add_argument("--reloc", choices=MODES, default="hard+soft")
    p.add_argument("--top-n", type=_int_at_least(0), default=1000)
    p.add_argument("--temperature", type=_positive_float, default=10.0)
    p.add_argument("--temperature-mode", choices=("multiply", "divide"), default="multiply")
    p.add_argument("--seed", type=int, default=0, help="seed for the default network weights")
    p.add_argument("--threads", type=_int_at_least(1), default=None, help="worker threads (env SNC_THREADS)")
    p.add_argument("--out", default="-")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sparse-ncnet", description="Sparse neighbourhood consensus matching")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="patch descriptors from a PGM/PPM image")
    p.add_argument("image")
    p.add_argument("--patch", type=_int_at_least(2), default=8)
    p.add_argument("--stride", type=_int_at_least(1), default=4)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("match", help="match two fine-resolution feature files")
    p.add_argument("feat_a")
    p.add_argument("feat_b")
    _add_match_options(p)
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("eval-mma", help="matching accuracy under a ground-truth homography")
    p.add_argument("--matches", required=True)
    p.add_argument("--homography", required=True)
    p.add_argument("--thresholds", default="1:10")
    p.add_argument("--pair-id")
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_eval_mma)

    p = sub.add_parser("selfcheck", help="compare fast paths against brute-force oracles")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--instances", type=_int_at_least(1), default=20)
    p.add_argument("--tolerance", type=_positive_float, default=1e-5)
    p.set_defaults(func=cmd_selfcheck)

    p = sub.add_parser("bench", help="sparse vs dense storage arithmetic")
    for name, default in (("--ha", 100), ("--wa", 75), ("--hb", 100), ("--wb", 75)):
        p.add_argument(name, type=_int_at_least(1), default=default)
    p.add_argument("--k", type=_int_at_least(1), default=10)
    p.add_argument("--sites", type=_int_at_least(0), default=None, help="override the site count")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("report", help="match many pairs and emit a JSON cost report")
    p.add_argument("features", nargs="+", help="feature files as A1 B1 A2 B2 ...")
    _add_match_options(p)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
