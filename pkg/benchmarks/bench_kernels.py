"""Compare the numba kernels against the pure-numpy fallback.

Each path runs in its own interpreter because the JIT switch is read at
import time. Compilation is excluded: every workload runs once as a warm-up
before it is timed.

The paths agree to rounding on Stage I. Individual recycled refits on nearly
flat biexponential fits can land on different points of the plateau when the
last bits of exp() differ, so the replicate mean agrees less tightly.

    python3 benchmarks/bench_kernels.py [--N 50] [--n 50] [--B 200] [--repeat 3]
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
from recycled_sts import RecycleConfig, SimDesign, fit_sts, gen_dataset, get_model, recycle_bootstrap
from recycled_sts._jit import USE_NUMBA

N, n, B, repeat = (int(v) for v in sys.argv[1:5])
design = SimDesign(model="biexp4", theta0=(1.0, 0.8, -0.5, -1.0), N=N, n=n, seed=7)
data, _ = gen_dataset(design, np.random.default_rng(7))
model = get_model(design.model)
cfg = RecycleConfig(B=B, inner_scheme="dirichlet", outer_scheme="dirichlet")

def stage_one():
    return fit_sts(model, data, design.inits())

def recycle():
    return recycle_bootstrap(model, data, fit, cfg, 11, threads=1)

def best(fn):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)

fit = stage_one()
run = recycle()
print(json.dumps({
    "jit": USE_NUMBA,
    "fit_sts": best(stage_one),
    "recycle": best(recycle),
    "theta_sts": fit.theta_sts.tolist(),
    "replicate_mean": np.nanmean(run.replicates, axis=0).tolist(),
}))
"""


def run_path(no_jit, args):
    env = dict(os.environ)
    env.pop("RECYCLED_STS_NO_JIT", None)
    if no_jit:
        env["RECYCLED_STS_NO_JIT"] = "1"
    argv = [sys.executable, "-c", WORKER, str(args.N), str(args.n), str(args.B), str(args.repeat)]
    out = subprocess.run(argv, env=env, capture_output=True, text=True)
    if out.returncode != 0:
        sys.exit(f"worker failed (no_jit={no_jit}):\n{out.stderr}")
    return json.loads(out.stdout.strip().splitlines()[-1])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--N", type=int, default=50)
    ap.add_argument("--n", type=int, default=50)
    ap.add_argument("--B", type=int, default=200, help="at least 100")
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    t0 = time.perf_counter()
    jit = run_path(False, args)
    py = run_path(True, args)
    print(f"workload: biexp4, N={args.N}, n={args.n}, B={args.B}, best of {args.repeat}")
    print(f"{'stage':<10}{'numba [s]':>12}{'numpy [s]':>12}{'speedup':>10}")
    for name in ("fit_sts", "recycle"):
        print(f"{name:<10}{jit[name]:>12.4f}{py[name]:>12.4f}{py[name] / jit[name]:>10.1f}")
    for label, key in (("Stage I estimate", "theta_sts"), ("mean of replicates", "replicate_mean")):
        dev = max(abs(a - b) for a, b in zip(jit[key], py[key]))
        print(f"max abs difference between paths, {label}: {dev:.3e}")
    print(f"total wall time {time.perf_counter() - t0:.1f} s")


if __name__ == "__main__":
    main()
