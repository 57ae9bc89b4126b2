"""Command-line entry point.

Exit codes: 0 success, 2 validation error, 3 numerical error, 4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import config as cfg
from .errors import (
    ConfigError, DomainError, EndiffError, InsufficientSweepError, ParameterError,
    ValidityWindowError,
)
from .pipeline import StageError, run_experiment

logger = logging.getLogger("endiff")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4
VALIDATION_ERRORS = (ConfigError, ParameterError, DomainError, InsufficientSweepError,
                     ValidityWindowError)

# stages run by each subcommand; "report" runs whatever the config asks for
SUBCOMMAND_STAGES = {
    "simulate-trajectories": ["simulate-trajectories"],
    "estimate-fdr": ["solve-pde", "estimate-fdr"],
    "solve-pde": ["solve-pde"],
    "fit-rate": ["solve-pde", "fit-rate"],
    "verify-bounds": ["estimate-fdr", "verify-bounds"],
    "check-sharpness": ["check-sharpness"],
    "report": None,
}

HELP = {
    "simulate-trajectories": "sample backward trajectory endpoints from the datum centre",
    "estimate-fdr": "Monte Carlo dissipation curves, compared with the mode solver",
    "solve-pde": "deterministic decay and dissipation histories",
    "fit-rate": "mixing times over the sweep and the fitted exponent",
    "verify-bounds": "fitted upper-bound constants and their spread",
    "check-sharpness": "test a claimed rate against a dissipation bound",
    "report": "run every stage listed in the config",
    "demo-figure": "qualitative snapshots of a stirred scalar (SVG)",
}


def _u64(text):
    value = int(text, 0)
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must fit in 64 unsigned bits")
    return value


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def build_parser():
    parser = argparse.ArgumentParser(
        prog="endiff",
        description="Enhanced-dissipation experiments: trajectories, mode solvers, rates.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML experiment config")
    common.add_argument("--out", type=Path, help="output directory (overrides the config)")
    common.add_argument("--jobs", type=_positive_int, default=1,
                        help="diffusivities processed in parallel")
    common.add_argument("--seed", type=_u64, help="master seed (overrides the config)")
    common.add_argument("--force", action="store_true", help="overwrite existing outputs")
    common.add_argument("--kappa", type=float, action="append",
                        help="diffusivity; repeat to build a sweep without a config")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in HELP.items():
        p = sub.add_parser(name, parents=[common], help=text, description=text)
        if name == "demo-figure":
            p.add_argument("--resolution", type=_positive_int, default=40)
    return parser


def _load_config(args, stages):
    if args.config is not None:
        conf = cfg.load(args.config)
    else:
        if not args.kappa:
            raise ConfigError("give --config or at least one --kappa")
        conf = cfg.ExperimentConfig(kappas=[])
    if args.kappa:
        conf = replace(conf, kappas=list(args.kappa))
    if args.seed is not None:
        conf = replace(conf, seed=args.seed)
    if args.out is not None:
        conf = replace(conf, out=str(args.out))
    if stages is not None:
        conf = replace(conf, stages=stages)
    return conf.validate()


def _summary(report):
    lines = []
    for r in report.results:
        bits = [f"kappa={r.kappa:g}"]
        if r.t_mix is not None:
            bits.append(f"t_mix={r.t_mix:.6g}")
        if r.energy_residual is not None:
            bits.append(f"energy_residual={r.energy_residual:.2e}")
        if r.max_rel_gap is not None:
            bits.append(f"fdr_vs_pde={r.max_rel_gap:.3%}")
        if r.c_fit is not None:
            bits.append(f"C_fit={r.c_fit:.4g}")
        if r.trajectories is not None:
            t = r.trajectories
            keys = [k for k in t if k.startswith("mean_") and not k.endswith("_se")]
            bits.extend(f"{k}={t[k]:.6g}" for k in keys)
        lines.append("  ".join(bits))
    if report.rate_fit is not None:
        f = report.rate_fit
        lines.append(f"exponent={f.exponent:.4f} (theory {f.theoretical:.4f})")
    if report.bound_check is not None:
        lines.append(f"C_fit spread={report.bound_check.spread:.4g}")
    if report.sharpness is not None:
        lines.append(json.dumps(report.sharpness.to_dict()))
    return "\n".join(lines)


def _demo(args):
    from .demo import demo_figure

    out = args.out or Path("results")
    out.mkdir(parents=True, exist_ok=True)
    path = out / "demo.svg"
    if path.exists() and not args.force:
        raise FileExistsError(f"refusing to overwrite {path} (use --force)")
    kappa = args.kappa[0] if args.kappa else 1e-3
    if not 0 < kappa < 1:
        raise ConfigError("kappa must lie in (0, 1)")
    path.write_text(demo_figure(kappa, args.resolution), encoding="utf-8")
    print(path)


def _exit_code(exc):
    if isinstance(exc, StageError):
        exc = exc.cause
    if isinstance(exc, VALIDATION_ERRORS):
        return EXIT_VALIDATION
    if isinstance(exc, OSError):
        return EXIT_IO
    return EXIT_NUMERICAL


def configure_logging():
    level = os.environ.get("ENDIFF_LOG", "WARNING").upper()
    if not isinstance(logging.getLevelName(level), int):
        level = "WARNING"
    logging.basicConfig(level=level, format="%(asctime)s %(name)s %(levelname)s %(message)s")


def main(argv=None):
    configure_logging()
    args = build_parser().parse_args(argv)
    try:
        if args.command == "demo-figure":
            _demo(args)
            return EXIT_OK
        conf = _load_config(args, SUBCOMMAND_STAGES[args.command])
        report = run_experiment(conf, out=conf.out, force=args.force, jobs=args.jobs)
    except (EndiffError, ValueError, OSError) as exc:
        code = _exit_code(exc)
        print(f"endiff: error: {exc}", file=sys.stderr)
        if isinstance(exc, StageError) and exc.report is not None:
            print(f"endiff: partial results written to {conf.out}", file=sys.stderr)
        return code
    print(_summary(report))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
