"""Compare the compiled and numpy ADMM kernels on lower-layer QPs.

Each backend runs in its own interpreter because the kernel is chosen at
import time from ``HYDROBESS_PURE_PYTHON``::

    python benchmarks/bench_qp.py [--instances 40] [--horizon 30]
"""

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def worker(instances: int, horizon: int) -> dict:
    from hydrobess.control import LowerLayer, LowerLayerInput
    from hydrobess.core import BessConfig, PlantConfig
    from hydrobess.plant import capability, initial_bess_state
    from hydrobess.qp import QpSolver, _backend

    pl, bess = PlantConfig(), BessConfig.sized(5.0)
    rng = np.random.default_rng(0)
    problems = []
    for _ in range(instances):
        h = float(rng.uniform(20.0, 34.0))
        f = 50.0 + np.cumsum(0.004 * rng.standard_normal(horizon))
        st = initial_bess_state(bess, float(rng.uniform(0.2, 0.8)))
        gamma = float(rng.choice([0.0, 0.1, 1.0, 10.0]))
        ll = LowerLayer(pl, bess, horizon)
        inp = LowerLayerInput(0, f, np.full(horizon, 27.0), h, st, 0.0, gamma, horizon, h)
        q, l, u, _ = ll.bounds(inp, *capability(st, bess))
        problems.append((ll.P, ll.A, q, l, u))

    iters, t0 = 0, time.perf_counter()
    for P, A, q, l, u in problems:
        # polish off so the timing is dominated by the ADMM kernel
        sol = QpSolver(P, A, eps_abs=1e-6).solve(q, l, u, polish=False)
        iters += sol.iterations
    secs = time.perf_counter() - t0
    return {"backend": _backend.NAME, "seconds": secs, "iterations": iters,
            "us_per_iter": 1e6 * secs / max(iters, 1)}


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--instances", type=int, default=40)
    ap.add_argument("--horizon", type=int, default=30)
    ap.add_argument("--worker", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args(argv)
    if args.worker:
        print(json.dumps(worker(args.instances, args.horizon)))
        return 0

    rows = []
    for pure in ("0", "1"):
        env = dict(os.environ, HYDROBESS_PURE_PYTHON=pure)
        out = subprocess.run([sys.executable, __file__, "--worker", "--instances", str(args.instances),
                              "--horizon", str(args.horizon)], env=env, capture_output=True,
                             text=True, check=True)
        rows.append(json.loads(out.stdout))
    print(f"{'backend':8s} {'seconds':>9s} {'iterations':>11s} {'us/iter':>9s}")
    for r in rows:
        print(f"{r['backend']:8s} {r['seconds']:9.3f} {r['iterations']:11d} {r['us_per_iter']:9.2f}")
    if rows[0]["backend"] == "cython" and rows[1]["backend"] == "python":
        print(f"speed-up {rows[1]['us_per_iter'] / rows[0]['us_per_iter']:.1f}x per iteration")
    else:
        print("compiled kernel not available; both runs used the numpy kernel")
    return 0


if __name__ == "__main__":
    sys.exit(main())
