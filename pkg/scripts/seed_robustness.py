"""How often the trend criteria hold across base seeds.

For each seed: every subject's 10th constrained generation must average at
least 10% less torque than the benchmark with a smaller gain spread than
generation 1, and the stiff subject's front centroid must differ by 20% or
more in some gain from at least one compliant subject.

    python scripts/seed_robustness.py --seeds 0 20
"""

import argparse
from dataclasses import replace
from pathlib import Path

import numpy as np

from passopt.harness.commands import TrialEvaluator
from passopt.harness.config import load_config
from passopt.optimizer import run_optimization
from passopt.simulator import run_trial


def trial_outcome(cfg):
    stiff = max(cfg.subjects, key=lambda n: cfg.human(n).stiffness)
    trend, centroids = True, {}
    for name in cfg.subjects:
        human = cfg.human(name)
        bench_task = replace(cfg.task, movements=cfg.bench.movements)
        tau_b = run_trial(cfg.system, cfg.bench.impedance, human, bench_task, cfg.simulation.dt,
                          cfg.subject_seed(name))[1].tau_rms
        ev = TrialEvaluator(cfg.system, human, cfg.task, cfg.simulation.dt, cfg.simulation.penalty)
        records, front = run_optimization(cfg.optimizer_for(name, True), cfg.system, ev,
                                          cfg.simulation.penalty)
        first, last = records[0].stats(), records[-1].stats()
        trend &= (last["tau_rms"][0] <= 0.9 * tau_b and last["B_y"][1] < first["B_y"][1]
                  and last["K_y"][1] < first["K_y"][1])
        centroids[name] = np.mean([i.gains.as_array() for i in front], axis=0)
    c = centroids[stiff]
    adapted = any(np.any(np.abs(c - v) / np.maximum(c, v) >= 0.2)
                  for n, v in centroids.items() if n != stiff)
    return trend, adapted


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--config", type=Path)
    ap.add_argument("--seeds", type=int, nargs=2, default=[0, 20], metavar=("FIRST", "STOP"))
    args = ap.parse_args()
    base = load_config(args.config)
    seeds = range(*args.seeds)
    n_trend = n_adapted = 0
    for seed in seeds:
        trend, adapted = trial_outcome(replace(base, seed=seed))
        n_trend += trend
        n_adapted += adapted
        print(f"seed {seed:>4}: trend {'ok' if trend else 'FAIL'}, adaptation {'ok' if adapted else 'FAIL'}",
              flush=True)
    print(f"trend held for {n_trend}/{len(seeds)} seeds, adaptation for {n_adapted}/{len(seeds)}")


if __name__ == "__main__":
    main()
