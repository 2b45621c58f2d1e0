"""Run the benchmark and both optimization protocols, then print a summary table.

    python scripts/run_protocols.py --out runs/protocols [--config my.toml] [--seed 3]
"""

import argparse
import time
from dataclasses import replace
from pathlib import Path

from passopt.harness.commands import cmd_bench, cmd_export_profiles, cmd_optimize, snapshot
from passopt.harness.config import load_config


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--config", type=Path)
    ap.add_argument("--seed", type=int)
    ap.add_argument("--out", type=Path, default=Path("runs/protocols"))
    args = ap.parse_args()

    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    args.out.mkdir(parents=True, exist_ok=True)
    snapshot(cfg, args.out)

    t0 = time.perf_counter()
    summaries = [cmd_bench(cfg, args.out),
                 cmd_optimize(cfg, args.out, constrained=False),
                 cmd_optimize(cfg, args.out, constrained=True)]
    cmd_export_profiles(args.out, clip=cfg.export.clip)

    bench_tau = summaries[0].averaged()["tau_rms"][0]
    print(f"{'protocol':<14} {'stage':<7} {'tau_rms [N m]':>18} {'t_total [s]':>16} {'vs bench':>9}")
    for s in summaries:
        stages = [s.headline] if s.protocol == "bench" else ["gen01", s.headline]
        for stage in stages:
            avg = s.averaged(stage)
            tau, t = avg["tau_rms"], avg["t_total"]
            change = 100.0 * (tau[0] / bench_tau - 1.0)
            print(f"{s.protocol:<14} {stage:<7} {tau[0]:>9.3f} +- {tau[1]:<6.3f} "
                  f"{t[0]:>7.2f} +- {t[1]:<5.2f} {change:>+8.0f}%")
        for name, msg in s.failed.items():
            print(f"  {name} failed: {msg}")
    print(f"done in {time.perf_counter() - t0:.0f} s; outputs under {args.out}")


if __name__ == "__main__":
    main()
