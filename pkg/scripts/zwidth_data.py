"""Z-width boundary curves for a sweep of position gains.

Writes one CSV per (P, D) pair with columns K_y, B_y_boundary, ready for
plotting the passive region above each curve.

    python scripts/zwidth_data.py --out runs/zwidth --P 10 20 40 --D 0.3 0.5 0.7
"""

import argparse
from dataclasses import replace
from pathlib import Path

from passopt.model import SystemParams
from passopt.passivity import z_width_boundary


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", type=Path, default=Path("runs/zwidth"))
    ap.add_argument("--P", type=float, nargs="+", default=[10.0, 20.0, 40.0])
    ap.add_argument("--D", type=float, nargs="+", default=[0.3, 0.5, 0.7])
    ap.add_argument("--k-range", type=float, nargs=2, default=[1.0, 500.0])
    ap.add_argument("--samples", type=int, default=200)
    args = ap.parse_args()

    args.out.mkdir(parents=True, exist_ok=True)
    base = SystemParams()
    for P in args.P:
        for D in args.D:
            params = replace(base, P=P, D=D)
            curve = z_width_boundary(params, *args.k_range, n=args.samples)
            path = curve.to_csv(args.out / f"zwidth_P{P:g}_D{D:g}.csv")
            print(f"P={P:<6g} D={D:<5g} boundary at K_y={args.k_range[1]:g}: "
                  f"B_y={curve.damping[-1]:.3f}  -> {path}")


if __name__ == "__main__":
    main()
