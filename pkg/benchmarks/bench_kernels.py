"""Time the jitted kernels against the plain numpy path.

Each backend runs in its own interpreter because PCBF_NUMBA is read at import.

    python benchmarks/bench_kernels.py [--repeat 5]
"""

import argparse
import json
import os
import subprocess
import sys
import time

WORKER = r"""
import json, sys, time
import numpy as np
from predcbf import _jit, conic, invariance, model, pcbf, safempc

repeat = int(sys.argv[1])


def best(fn):
    fn()  # compile / warm caches
    ts = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        ts.append(time.perf_counter() - t)
    return min(ts)


lin = model.preset("linear-unstable")
pen = model.preset("nonlinear-pendulum")
sp = safempc.SafeMpcProblem.soft(lin)
prog = safempc.build(sp, np.array([-1.2, 0.8]))
field = pcbf.ValueGrid.from_function(lambda p: float(np.hypot(*p) - 0.5), [[-1, 1], [-1, 1]], 201)
pts = np.random.default_rng(0).uniform(-1.5, 1.5, (50, 2))

out = {
    "backend": _jit.backend_name(),
    "ipm_mpc_solve": best(lambda: conic.solve(prog)),
    "mpc_50_states": best(lambda: [safempc.solve(sp, p) for p in pts]),
    "kernel_linear_101": best(lambda: invariance.viability_kernel_grid(
        lin.system, lin.X, lin.U, 101, 31, mode="center")),
    "kernel_pendulum_201": best(lambda: invariance.viability_kernel_grid(
        pen.system, pen.X, pen.U, 201, 61, mode="outer")),
    "contour_201": best(lambda: pcbf.extract_contour(field, 0.0, eps0=0.0)),
}
print(json.dumps(out))
"""


def run(flag, repeat):
    env = dict(os.environ, PCBF_NUMBA=flag)
    res = subprocess.run([sys.executable, "-c", WORKER, str(repeat)], env=env,
                         capture_output=True, text=True, check=True)
    return json.loads(res.stdout.strip().splitlines()[-1])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--json", help="also write the table to this file")
    args = ap.parse_args()
    t0 = time.perf_counter()
    fast, slow = run("1", args.repeat), run("0", args.repeat)
    print(f"{'kernel':<22}{fast['backend']:>12}{slow['backend']:>12}{'speedup':>10}")
    rows = {}
    for key in fast:
        if key == "backend":
            continue
        a, b = fast[key], slow[key]
        rows[key] = {"numba_s": a, "numpy_s": b, "speedup": b / a}
        print(f"{key:<22}{a * 1e3:>10.2f}ms{b * 1e3:>10.2f}ms{b / a:>9.1f}x")
    print(f"total wall time {time.perf_counter() - t0:.1f}s")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=1)


if __name__ == "__main__":
    main()
