"""Command-line entry point: ``dsdkit <command> [options]``.

Exit codes: 0 success, 1 a ``verify`` check failed, 2 bad arguments or input files.
Every command takes ``--seed``; when it is omitted the ``DSDKIT_SEED`` environment
variable is used, then 0.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from dsdkit import __version__, evalmetrics, experiments, io, trcl
from dsdkit.errors import DsdError, ParseError
from dsdkit.model import ModelConfig, forward, init_weights, load_config, load_weights, save_weights
from dsdkit.synth import SynthConfig, synth_dataset
from dsdkit.tensor import DTYPE, load_tensor

SEED_ENV = "DSDKIT_SEED"


class UsageError(Exception):
    """Bad command-line input detected after argparse (exit code 2)."""


def _resolve_seed(value: Optional[int]) -> int:
    if value is not None:
        return value
    env = os.environ.get(SEED_ENV)
    if env is None or env == "":
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"{SEED_ENV}={env!r} is not an integer") from None


def _class_set(text: str) -> frozenset[int]:
    if not text:
        return frozenset()
    try:
        return frozenset(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated class indices, got {text!r}") from None


def _emit(text: str, out: Optional[str]) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2) + "\n"


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def cmd_clean(args) -> int:
    table = io.load_predictions_csv(args.input)
    cfg = trcl.CleaningConfig(
        strategy=args.strategy,
        combine_mode=args.mode,
        alpha=args.alpha,
        iterations=args.iterations,
        protected_classes=args.protected,
        rounding=args.rounding,
    )
    report = trcl.plain_cl(table, cfg) if args.plain else trcl.trcl_pipeline(table, cfg)
    _emit(io.format_noise_report(report), args.report)
    if args.labels:
        io.save_cleaned_csv(table, report.flagged, args.labels)
    passes = " -> ".join(str(c) for c in report.iterations)
    print(f"flagged {len(report.flagged)} of {table.n} samples (per pass: {passes})", file=sys.stderr)
    return 0


def cmd_forward(args, seed: int) -> int:
    cfg = load_config(args.config) if args.config else ModelConfig()
    weights = load_weights(args.weights) if args.weights else init_weights(cfg, seed)
    if args.input:
        image = load_tensor(args.input)
    else:
        image = np.random.default_rng(seed).standard_normal((*cfg.image_size, cfg.in_channels)).astype(DTYPE)
    shapes: list[dict] = []
    probs = forward(image, cfg, weights, trace=lambda label, shape: shapes.append({"stage": label, "shape": list(shape)}))
    out = {"probabilities": [float(v) for v in probs], "argmax": int(np.argmax(probs))}
    if args.shapes:
        out["shapes"] = shapes
    _emit(_dumps(out), args.out)
    return 0


def cmd_init_weights(args, seed: int) -> int:
    cfg = load_config(args.config) if args.config else ModelConfig()
    save_weights(args.out, init_weights(cfg, seed))
    return 0


def cmd_synth(args, seed: int) -> int:
    cfg = SynthConfig(
        seed=seed,
        num_videos=args.videos,
        frames_per_video=args.frames,
        num_classes=args.classes,
        noise_rate=args.noise_rate,
        burst_min=args.burst_min,
        burst_max=args.burst_max,
        teacher_sharpness=args.sharpness,
        protected_class=args.protected,
        noise_mode=args.noise_mode,
    )
    ds = synth_dataset(cfg)
    _emit(io.format_predictions_csv(ds.table), args.out)
    if args.truth:
        with open(args.truth, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["sample_id", "true_label", "is_noise"])
            for sid, label, noisy in zip(ds.table.sample_ids, ds.true_labels, ds.noise_mask):
                writer.writerow([int(sid), int(label), int(noisy)])
    return 0


def cmd_bench(args, seed: int) -> int:
    from dsdkit.bench import bench_scan_vs_attention

    report = bench_scan_vs_attention(
        args.lengths, args.repeats, width=args.width, heads=args.heads,
        state_size=args.state_size, seed=seed, min_sample_s=args.min_sample_ms / 1000.0,
    )
    _emit(_dumps(report.to_dict()), args.out)
    return 0


def _read_pred_label_csv(path: str) -> tuple[list[int], list[int]]:
    preds, labels = [], []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["pred", "label"]:
            raise ParseError(f"bad header {header!r}; expected pred,label", path=path, line=1)
        for row in reader:
            if not row:
                continue
            try:
                p, y = (int(v) for v in row)
            except ValueError:
                raise ParseError(f"expected two integers, got {row!r}", path=path, line=reader.line_num) from None
            preds.append(p)
            labels.append(y)
    if not labels:
        raise ParseError("no data rows", path=path, line=2)
    return preds, labels


def cmd_metrics(args) -> int:
    preds, labels = _read_pred_label_csv(args.input)
    report = evalmetrics.classification_report(preds, labels, args.num_classes)
    _emit(_dumps(report.to_dict()), args.out)
    return 0


def cmd_compare(args, seed: int) -> int:
    seeds = range(seed, seed + args.seeds)
    synth = SynthConfig(teacher_sharpness=args.sharpness, noise_mode=args.noise_mode)
    cleaning = trcl.CleaningConfig(strategy=args.strategy, combine_mode=args.mode,
                                   alpha=args.alpha, iterations=args.iterations)
    rows = experiments.compare_cl_trcl(seeds, synth, cleaning)
    out = {
        "cleaning": cleaning.to_dict(),
        "synth": synth.to_dict() | {"seed": None},
        "wins": sum(r.temporal_wins for r in rows),
        "seeds": [r.to_dict() for r in rows],
    }
    _emit(_dumps(out), args.out)
    return 0


def cmd_ablate(args, seed: int) -> int:
    points = experiments.alpha_sweep(args.alphas, SynthConfig(seed=seed))
    _emit(_dumps({"seed": seed, "points": [asdict(p) for p in points]}), args.out)
    return 0


def cmd_verify(args, seed: int) -> int:
    from dsdkit.verify import CHECKS, run_checks

    unknown = [n for n in args.only or () if n not in CHECKS]
    if unknown:
        raise UsageError(f"unknown check(s) {', '.join(unknown)}; choose from {', '.join(CHECKS)}")
    results = run_checks(seed, args.only)
    for r in results:
        print(f"{'PASS' if r.ok else 'FAIL'}  {r.name:<20} {r.seconds:6.2f}s  {r.detail}")
    failed = sum(not r.ok for r in results)
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return 1 if failed else 0


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None,
                        help=f"random seed (default: ${SEED_ENV} or 0)")

    parser = argparse.ArgumentParser(prog="dsdkit", description="DSDFormer inference and temporal label cleaning")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("clean", parents=[common], help="flag mislabelled frames in a prediction CSV")
    p.add_argument("input", help="prediction CSV (sample_id,video_id,frame_idx,noisy_label,p0..)")
    p.add_argument("--report", help="noise report JSON path (default: stdout)")
    p.add_argument("--labels", help="write cleaned labels CSV here")
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--strategy", type=int, choices=trcl.STRATEGIES, default=4)
    p.add_argument("--mode", choices=trcl.COMBINE_MODES, default="intersection")
    p.add_argument("--iterations", type=int, default=1)
    p.add_argument("--protected", type=_class_set, default=frozenset(),
                   help="comma-separated classes that are never flagged")
    p.add_argument("--rounding", choices=trcl.ROUNDING_RULES, default="half_away")
    p.add_argument("--plain", action="store_true", help="skip the temporal refinement")

    p = sub.add_parser("forward", parents=[common], help="run the classifier on one image tensor")
    p.add_argument("--config", help="model config JSON (default: built-in toy config)")
    p.add_argument("--weights", help="weight directory (default: seeded random init)")
    p.add_argument("--input", help="DSD1 image tensor H x W x C (default: seeded noise)")
    p.add_argument("--shapes", action="store_true", help="include per-stage output shapes")
    p.add_argument("--out")

    p = sub.add_parser("init-weights", parents=[common], help="write a seeded random weight directory")
    p.add_argument("--config")
    p.add_argument("--out", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic noisy video table")
    d = SynthConfig()
    p.add_argument("--out", help="prediction CSV path (default: stdout)")
    p.add_argument("--truth", help="ground-truth CSV path")
    p.add_argument("--videos", type=int, default=d.num_videos)
    p.add_argument("--frames", type=int, default=d.frames_per_video)
    p.add_argument("--classes", type=int, default=d.num_classes)
    p.add_argument("--noise-rate", type=float, default=d.noise_rate)
    p.add_argument("--burst-min", type=int, default=d.burst_min)
    p.add_argument("--burst-max", type=int, default=d.burst_max)
    p.add_argument("--sharpness", type=float, default=d.teacher_sharpness)
    p.add_argument("--protected", type=int, default=None)
    p.add_argument("--noise-mode", choices=("burst", "iid"), default=d.noise_mode)

    p = sub.add_parser("bench", parents=[common], help="time selective scan against attention")
    p.add_argument("--lengths", type=int, nargs="+", default=[256, 512, 1024])
    p.add_argument("--repeats", type=int, default=9)
    p.add_argument("--width", type=int, default=16)
    p.add_argument("--heads", type=int, default=2)
    p.add_argument("--state-size", type=int, default=16)
    p.add_argument("--min-sample-ms", type=float, default=50.0)
    p.add_argument("--out")

    p = sub.add_parser("metrics", parents=[common], help="classification metrics from a pred,label CSV")
    p.add_argument("input")
    p.add_argument("--num-classes", type=int, default=None)
    p.add_argument("--out")

    p = sub.add_parser("compare", parents=[common], help="plain CL vs temporal CL on synthetic seeds")
    p.add_argument("--seeds", type=int, default=20, help="number of consecutive seeds from --seed")
    p.add_argument("--sharpness", type=float, default=SynthConfig().teacher_sharpness)
    p.add_argument("--noise-mode", choices=("burst", "iid"), default="burst")
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--strategy", type=int, choices=trcl.STRATEGIES, default=4)
    p.add_argument("--mode", choices=trcl.COMBINE_MODES, default="intersection")
    p.add_argument("--iterations", type=int, default=1)
    p.add_argument("--out")

    p = sub.add_parser("ablate", parents=[common], help="flag precision across boost factors")
    p.add_argument("--alphas", type=float, nargs="+", default=list(experiments.DEFAULT_ALPHAS))
    p.add_argument("--out")

    p = sub.add_parser("verify", parents=[common], help="run the invariant suite")
    p.add_argument("--only", nargs="+", help="run only these checks")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        seed = _resolve_seed(args.seed)
        if args.command == "clean":
            return cmd_clean(args)
        if args.command == "metrics":
            return cmd_metrics(args)
        handler = {
            "forward": cmd_forward,
            "init-weights": cmd_init_weights,
            "synth": cmd_synth,
            "bench": cmd_bench,
            "compare": cmd_compare,
            "ablate": cmd_ablate,
            "verify": cmd_verify,
        }[args.command]
        return handler(args, seed)
    except (UsageError, DsdError, OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        print(f"dsdkit {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
