"""Errors of the quadratic-plus-one solution on the line under dy and dt refinement.

    python3 scripts/convergence_study.py --levels 4
"""
import argparse

from rootlip.experiments import convergence_study
from rootlip.initial import make_initial
from rootlip.solver import SolverConfig
from rootlip.transform import DomainCase


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--a", type=float, default=0.5, help="u0 = a x^2 + 1")
    p.add_argument("--dy", type=float, default=1 / 8)
    p.add_argument("--levels", type=int, default=3)
    p.add_argument("--t-end", type=float, default=0.5)
    args = p.parse_args()
    case = DomainCase("line", kappa=max(args.a, 1e-12), K=max(1.0, 1 / args.a), gamma=2.0)
    u0 = make_initial("quadratic_plus_one", case, a=args.a)
    cfg = SolverConfig(dy=args.dy, dt_initial=4e-3, t_end=args.t_end, n_snapshots=3,
                       y_range=(-6.0, 6.0))
    a = args.a
    out = convergence_study(u0, case, cfg, exact=lambda t, x: (a * x**2 + 1) / (1 - a * t),
                            levels=args.levels)
    print(f"{'dy':>10} {'max rel error':>14} {'ratio':>7}")
    ratios = [None] + out["ratios"]
    for dy, err, r in zip(out["dy"], out["errors"], ratios):
        print(f"{dy:>10.5f} {err:>14.4e} {'' if r is None else f'{r:7.2f}'}")


if __name__ == "__main__":
    main()
