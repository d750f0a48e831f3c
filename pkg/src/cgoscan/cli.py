"""Command-line entry point.

Commands: phantom | simulate | reconstruct | verify | report | all.
Exit codes: 0 ok, 2 configuration error, 3 numerical failure,
4 verification failure.  Failures also leave a machine-readable
``error.json`` in the output directory.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

COMMANDS = ("phantom", "simulate", "reconstruct", "verify", "report", "all")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_VERIFY = 4


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="cgoscan",
        description="Small-inclusion refractive-index reconstruction from "
        "partial Dirichlet-to-Neumann data",
    )
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="YAML run configuration")
    p.add_argument("--out", default=None, help="output directory (overrides config)")
    p.add_argument("--seed", type=int, default=None, help="noise seed override")
    p.add_argument("--threads", type=int, default=None, help="BLAS/OpenMP thread cap")
    p.add_argument("--path", choices=("A", "B"), default=None,
                   help="trace path override (A: recovered traces, B: leading order)")
    p.add_argument("--l", default=None,
                   help="comma-separated |l| values override, e.g. '4,8,16'")
    return p


def _write_error(out_dir, kind: str, message: str) -> None:
    try:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "error.json").write_text(
            json.dumps({"error": kind, "message": message}, sort_keys=True, indent=2)
            + "\n"
        )
    except OSError:
        pass


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads is not None:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)

    # import after the thread env is set so BLAS pools pick it up
    from dataclasses import replace

    from numpy.linalg import LinAlgError

    from .config import parse_config
    from .errors import CgoscanError, MissingArtifact, ParseError, ValidationError
    from .pipeline import run_pipeline

    try:
        cfg = parse_config(args.config)
        if args.seed is not None:
            cfg = cfg.replace(data=replace(cfg.data, seed=args.seed))
        if args.path is not None:
            cfg = cfg.replace(physics=replace(cfg.physics, trace_path=args.path))
        if args.l is not None:
            ls = tuple(float(v) for v in args.l.split(","))
            cfg = cfg.replace(physics=replace(cfg.physics, l_values=ls))
    except (ParseError, ValidationError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        if args.out:
            _write_error(args.out, type(exc).__name__, str(exc))
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out_dir = args.out or cfg.output.directory
    try:
        summary = run_pipeline(cfg, args.command, out_dir)
    except (ParseError, ValidationError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        _write_error(out_dir, type(exc).__name__, str(exc))
        return EXIT_CONFIG
    except MissingArtifact as exc:
        print(f"missing artifact: {exc}", file=sys.stderr)
        _write_error(out_dir, "MissingArtifact", str(exc))
        return EXIT_NUMERICAL
    except CgoscanError as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        _write_error(out_dir, type(exc).__name__, str(exc))
        return EXIT_NUMERICAL
    except LinAlgError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        _write_error(out_dir, "LinAlgError", str(exc))
        return EXIT_NUMERICAL

    if not summary.get("verify_passed", True):
        print("verification failed; see scoreboard.json", file=sys.stderr)
        _write_error(out_dir, "VerificationFailed", "one or more checks failed")
        return EXIT_VERIFY
    print(json.dumps({k: v for k, v in summary.items() if k != "config_hash"}
                     | {"config_hash": summary["config_hash"]}, indent=2, sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
