"""Command-line entry point.

Exit codes: 0 all criteria pass, 1 a criterion failed, 2 parameter-regime or
configuration error, 3 I/O error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .harness import COMMANDS, FORMATS, ConfigError, ExperimentConfig, parse_seeds, write_report
from .state_evolution import RegimeError

EXIT_PASS, EXIT_FAIL, EXIT_REGIME, EXIT_IO = 0, 1, 2, 3

# flag -> (config attribute, type)
_OVERRIDES = {
    "n": int,
    "lam": float,
    "gamma0": float,
    "variant": str,
    "k": int,
    "epsilon": float,
    "probe_points": int,
    "newton_restarts": int,
    "sf_restarts": int,
    "eigensolver": str,
    "quadrature_order": int,
    "workers": int,
    "sweep_stage": str,
}


def _csv_list(kind):
    return lambda text: [kind(t) for t in text.split(",") if t.strip()]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="postamp", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", type=Path, help="JSON experiment config; flags override its fields")
    p.add_argument("--seed", type=int, help="run a single seed")
    p.add_argument("--seeds", type=parse_seeds, help='seed range "0:20" or list "1,2,3"')
    p.add_argument("--out", help="output directory")
    p.add_argument("--format", type=_csv_list(str), help=f"comma-separated subset of {','.join(FORMATS)}")
    p.add_argument("--sweep-lam", type=_csv_list(float))
    p.add_argument("--sweep-n", type=_csv_list(int))
    p.add_argument("-v", "--verbose", action="store_true")
    for name, kind in _OVERRIDES.items():
        p.add_argument(f"--{name.replace('_', '-')}", dest=name, type=kind)
    return p


def config_from_args(args) -> ExperimentConfig:
    cfg = ExperimentConfig.loads(args.config.read_text()) if args.config else ExperimentConfig()
    for name in _OVERRIDES:
        value = getattr(args, name)
        if value is not None:
            setattr(cfg, name, value)
    if args.seeds is not None:
        cfg.seeds = args.seeds
    if args.seed is not None:
        cfg.seeds = [args.seed]
    if args.out is not None:
        cfg.out_dir = args.out
    if args.format is not None:
        cfg.formats = args.format
    if args.sweep_lam is not None:
        cfg.sweep_lam = args.sweep_lam
    if args.sweep_n is not None:
        cfg.sweep_n = args.sweep_n
    return cfg.validate()


def _error(kind: str, message: str, code: int) -> int:
    print(json.dumps({"error": kind, "message": message, "exit_code": code}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
    except (ConfigError, ValueError) as exc:
        return _error("config", str(exc), EXIT_REGIME)
    except OSError as exc:
        return _error("io", str(exc), EXIT_IO)
    try:
        report = COMMANDS[args.command](cfg)
    except RegimeError as exc:
        return _error("regime", str(exc), EXIT_REGIME)
    try:
        paths = write_report(report, cfg.out_dir, cfg.formats)
    except OSError as exc:
        return _error("io", str(exc), EXIT_IO)
    for line in report.summary_lines():
        print(line)
    for path in paths:
        print(f"wrote {path}")
    return EXIT_PASS if report.passed else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
