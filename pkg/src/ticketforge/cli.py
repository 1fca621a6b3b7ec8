"""Command-line interface.

Subcommands: search (run an experiment), metrics (recompute summary.csv),
report (emit figure-data CSVs), trajectory (one-off length of a saved
checkpoint), validate (schema-check a config).
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, load_config
from .harness import ArtifactError, emit_reports, run_experiment, write_summary
from .network import load_checkpoint
from .rng import RngState
from .ticket_search import PROBE_STREAM, PROJECTION_STREAM
from .trajectory import dump_projected_points, make_probe, make_projection, measure

DATA_DIR_ENV = "TICKETFORGE_DATA_DIR"


def _global_flags() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--jobs", type=int, default=None, metavar="N",
                        help="worker processes (default: available cores)")
    shared.add_argument("--data-dir", type=Path, default=None, metavar="PATH",
                        help=f"base directory for dataset files (or ${DATA_DIR_ENV})")
    shared.add_argument("--resume", dest="resume", action="store_true", default=True,
                        help="skip runs already in runs.jsonl (default)")
    shared.add_argument("--no-resume", dest="resume", action="store_false",
                        help="discard existing runs and start over")
    return shared


def build_parser() -> argparse.ArgumentParser:
    shared = _global_flags()
    parser = argparse.ArgumentParser(prog="ticketforge",
                                     description="Desk-scale lottery-ticket laboratory.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("search", parents=[shared], help="run an experiment from a config")
    p.add_argument("config", type=Path)

    p = sub.add_parser("metrics", parents=[shared],
                       help="recompute summary.csv from an artifact directory")
    p.add_argument("artifact_dir", type=Path)

    p = sub.add_parser("report", parents=[shared],
                       help="emit figure plot-data CSVs from an artifact directory")
    p.add_argument("artifact_dir", type=Path)

    p = sub.add_parser("trajectory", parents=[shared],
                       help="measure one checkpoint's trajectory length")
    p.add_argument("checkpoint", type=Path)
    p.add_argument("--points", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--radius", type=float, default=1.0)
    p.add_argument("--dump", type=Path, default=None, metavar="CSV",
                   help="also write projected points as (t, p1, p2) rows")

    p = sub.add_parser("validate", parents=[shared], help="schema-check a config file")
    p.add_argument("config", type=Path)
    return parser


def _data_dir(args) -> Path | None:
    if args.data_dir is not None:
        return args.data_dir
    env = os.environ.get(DATA_DIR_ENV)
    return Path(env) if env else None


def _cmd_search(args) -> int:
    cfg = load_config(args.config, data_dir=_data_dir(args))
    result = run_experiment(cfg, jobs=args.jobs, resume=args.resume,
                            data_dir=_data_dir(args))
    print(f"{result.n_executed} run(s) executed, {result.n_skipped} resumed, "
          f"{result.n_failed} failed; artifacts in {result.output_dir}")
    if result.n_total and result.n_failed == result.n_total:
        print("error: every run failed", file=sys.stderr)
        return 1
    return 0


def _cmd_trajectory(args) -> int:
    spec, params, mask = load_checkpoint(args.checkpoint)
    rng = RngState(args.seed)
    probe = make_probe(int(np.prod(spec.input_shape)), args.points, args.radius,
                       rng.at(PROBE_STREAM))
    projection = make_projection(spec.num_classes, rng.at(PROJECTION_STREAM))
    result = measure(spec, params, mask, probe, projection)
    if args.dump is not None:
        dump_projected_points(args.dump, result)
    print(f"trajectory_length={result.length!r}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "search":
            return _cmd_search(args)
        if args.command == "metrics":
            path = write_summary(args.artifact_dir)
            print(f"wrote {path}")
            return 0
        if args.command == "report":
            for path in emit_reports(args.artifact_dir):
                print(f"wrote {path}")
            return 0
        if args.command == "trajectory":
            return _cmd_trajectory(args)
        if args.command == "validate":
            load_config(args.config, data_dir=_data_dir(args))
            print(f"{args.config}: OK")
            return 0
    except (ConfigError, ArtifactError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    raise AssertionError(f"unhandled command {args.command}")


if __name__ == "__main__":
    sys.exit(main())
