"""Command-line entry point: ``aegis run | bench | validate-model | gen-fixture``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import graph
from .errors import AegisError, ModelError, ModelTruncationError
from .model_io import gen_fixture, load_model


def _cmd_run(args) -> int:
    from .pipeline import load_config, run

    try:
        cfg = load_config(args.config)
    except AegisError as exc:
        print(f"aegis: error: {exc}", file=sys.stderr)
        return exc.exit_code
    return run(cfg)


def _cmd_bench(args) -> int:
    from .bench import bench
    from .pipeline import load_config

    cfg = load_config(args.config)
    report = bench(cfg, args.warmup, args.frames)
    print(report.to_json() if args.json else report.to_text())
    if args.report:
        Path(args.report).write_text(report.to_json() + "\n", encoding="utf-8")
    if args.figures:
        from .plots import render_bench_figures

        for p in render_bench_figures(report, args.figures):
            print(f"wrote {p}", file=sys.stderr)
    return 0


def _cmd_validate(args) -> int:
    try:
        manifest, weights = load_model(args.path)
        g = graph.compile(manifest, weights)
    except ModelTruncationError as exc:
        print(f"invalid model: {exc} (offset {exc.offset})", file=sys.stderr)
        return exc.exit_code
    except ModelError as exc:
        print(f"invalid model: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"cannot read model: {exc}", file=sys.stderr)
        return ModelError.exit_code
    h, w, t = g.input_spec
    print(f"input {h}x{w}x{t}")
    for lid, op, shape in g.shape_chain():
        print(f"  {lid:<16} {op:<16} {'x'.join(map(str, shape))}")
    n = g.steps[-1].output_shape[-1]
    print(f"output classes {n}: {', '.join(g.class_labels)}")
    print(f"flops_estimate {graph.flops_estimate(g)}")
    if args.expect_t is not None and args.expect_t != t:
        print(f"t mismatch: model has t={t}, expected {args.expect_t}", file=sys.stderr)
        return ModelError.exit_code
    return 0


def _cmd_gen_fixture(args) -> int:
    try:
        gen_fixture(args.seed, args.t, args.out)
    except AegisError as exc:
        print(f"aegis: error: {exc}", file=sys.stderr)
        return exc.exit_code
    print(f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aegis", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log dropped frames etc.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="process a video and write augmented frames + JSONL")
    p.add_argument("--config", required=True)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("bench", help="measure per-stage latency and FPS")
    p.add_argument("--config", required=True)
    p.add_argument("--warmup", type=int, default=10)
    p.add_argument("--frames", type=int, default=100)
    p.add_argument("--json", action="store_true", help="print the JSON report")
    p.add_argument("--report", help="also write the JSON report to this file")
    p.add_argument("--figures", help="directory for latency plots (PNG)")
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("validate-model", help="load + compile a .tcvn model")
    p.add_argument("path")
    p.add_argument("--expect-t", type=int)
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("gen-fixture", help="write a seeded random-weight ResNet20 model")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--t", type=int, default=3)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gen_fixture)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except AegisError as exc:
        print(f"aegis: error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
