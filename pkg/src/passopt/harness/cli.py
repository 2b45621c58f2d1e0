"""Command-line entry point: ``passopt {analyze,bench,optimize,export-profiles}``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .commands import (
    CheckpointMismatch,
    MissingTraces,
    cmd_analyze,
    cmd_bench,
    cmd_export_profiles,
    cmd_optimize,
    snapshot,
)
from .config import ParseError, ValidationError, load_config

log = logging.getLogger("passopt")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=argparse.SUPPRESS,
                        help="TOML experiment file (default: the shipped default.toml)")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="override the config seed")
    common.add_argument("--out", type=Path, default=argparse.SUPPRESS,
                        help="run directory (default: output_dir from the config)")

    parser = argparse.ArgumentParser(prog="passopt", parents=[common],
                                     description="Passivity-constrained tuning of an admittance controller.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("analyze", parents=[common], help="Z-width curves and passivity verdicts")
    sub.add_parser("bench", parents=[common], help="run the fixed benchmark controller")
    opt = sub.add_parser("optimize", parents=[common], help="run NSGA-II for every subject")
    opt.add_argument("--constrained", action="store_true", help="repair offspring into the passive region")
    opt.add_argument("--resume", type=Path, help="checkpoint JSON to continue from")
    exp = sub.add_parser("export-profiles", parents=[common], help="mean/deviation torque profiles")
    exp.add_argument("--clip", type=float, help="profile length in seconds (default: config export.clip)")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    try:
        config = load_config(getattr(args, "config", None))
    except (ParseError, ValidationError) as exc:
        print(exc, file=sys.stderr)
        return 2
    if hasattr(args, "seed"):
        config = replace(config, seed=args.seed)
    out = Path(getattr(args, "out", config.output_dir))
    out.mkdir(parents=True, exist_ok=True)

    try:
        if args.command == "analyze":
            snapshot(config, out)
            report = cmd_analyze(config, out)
            for v in report.verdicts:
                log.info("B_y=%-8g K_y=%-8g stable=%s sufficient=%s positive_real=%s",
                         v["B_y"], v["K_y"], v["stable"], v["sufficient"], v["positive_real"])
            log.info("wrote %d boundary curves to %s", len(report.curves), out / "analyze")
        elif args.command == "bench":
            snapshot(config, out)
            _report(cmd_bench(config, out))
        elif args.command == "optimize":
            snapshot(config, out)
            _report(cmd_optimize(config, out, constrained=args.constrained, resume=args.resume))
        else:
            paths = cmd_export_profiles(out, clip=args.clip or config.export.clip)
            log.info("wrote %d profiles to %s", len(paths), out / "profiles")
    except (CheckpointMismatch, MissingTraces) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


def _report(summary) -> None:
    for name, msg in summary.failed.items():
        log.warning("%s failed: %s", name, msg)
    avg = summary.averaged()
    log.info("%s (%s): tau_rms %.3f +- %.3f N m, t_total %.3f +- %.3f s", summary.protocol,
             summary.headline, *avg["tau_rms"], *avg["t_total"])


if __name__ == "__main__":
    sys.exit(main())
