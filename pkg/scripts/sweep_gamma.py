"""Sweep the L1 move weight of the DLMPC controller on a synthetic trace.

Prints hydro mileage, number of movements, 30 s energy error and the mean
step time for each weight, so the wear/tracking trade-off can be read off::

    python scripts/sweep_gamma.py --hours 2 --kw 5 --gammas 0 0.1 0.4 1 10
"""

import argparse
import dataclasses
import sys

from hydrobess.core import BessConfig, ControllerConfig, Scenario
from hydrobess.harness import run_scenario


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--hours", type=float, default=2.0)
    ap.add_argument("--kw", type=float, default=5.0)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--horizon", type=int, default=30)
    ap.add_argument("--gammas", type=float, nargs="+", default=[0.0, 0.1, 0.4, 1.0, 10.0])
    args = ap.parse_args(argv)

    base = Scenario(duration_h=args.hours, seed=args.seed, bess=BessConfig.sized(args.kw),
                    controller=ControllerConfig(kind="dlmpc", horizon=args.horizon))
    print(f"{'gamma':>8s} {'mileage':>10s} {'nom':>7s} {'e30':>9s} {'ms/step':>8s}")
    for g in args.gammas:
        s = dataclasses.replace(base, name=f"gamma_{g:g}",
                                controller=dataclasses.replace(base.controller, gamma=g))
        res = run_scenario(s)
        r = res.report
        print(f"{g:8g} {r.mileage:10.2f} {r.nom:7d} {r.e30:9.4f} {res.mean_step_ms:8.2f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
