"""Compiled vs numpy kernels.

    python3 benchmarks/bench_kernels.py [--repeat 3] [--json out.json]

Each kernel runs on both backends with identical inputs; the table reports
the best wall time and the maximum absolute difference between outputs.
"""

import argparse
import json
import sys
import time

import numpy as np

from delaycast import kernels
from delaycast.dynsys import IntegratorConfig, LorenzParams
from delaycast.nn import mlp_init


def _best(fn, repeat):
    best, out = float("inf"), None
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t)
    return best, out


def cases(rng):
    X = rng.standard_normal((4000, 6))
    yield "nearest_neighbors 4000x6", lambda b: kernels.nearest_neighbors(X, 0, backend=b)

    a, c = rng.standard_normal(1_000_000), rng.standard_normal(1_000_000)
    yield "hist2d_counts 1e6 pts 100x100", lambda b: kernels.hist2d_counts(
        a, c, (-3, 3), (-3, 3), 100, 100, backend=b)

    net = mlp_init([3, 64, 64, 1], seed=0)
    z0 = rng.standard_normal((200, 3)) * 0.5
    yield "mlp_rollout 200 x 100 steps", lambda b: kernels.mlp_rollout(
        net.weights, net.biases, net.activations, z0, 1, 100, 1e3, backend=b)

    cfg = IntegratorConfig("dopri5_adaptive", rtol=1e-8, atol=1e-10)
    y0 = np.array([1.0, 1.0, 1.0])
    yield "lorenz_dopri5 200 samples", lambda b: kernels.lorenz_dopri5(
        LorenzParams(), y0, 200, 0.1, cfg, backend=b)


def _diff(u, v):
    if isinstance(u, tuple):
        return max(_diff(a, b) for a, b in zip(u, v))
    u, v = np.asarray(u, dtype=np.float64), np.asarray(v, dtype=np.float64)
    both = np.isfinite(u) & np.isfinite(v)
    if not np.array_equal(np.isfinite(u), np.isfinite(v)):
        return float("inf")
    return float(np.max(np.abs(u[both] - v[both]))) if both.any() else 0.0


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--json", help="also write results as JSON")
    args = ap.parse_args(argv)
    if kernels.BACKEND != "compiled":
        print("compiled kernels are not built; nothing to compare", file=sys.stderr)
        return 1
    rng = np.random.default_rng(0)
    results = []
    print(f"{'kernel':34s} {'compiled s':>11s} {'python s':>11s} {'speedup':>8s} {'max |diff|':>11s}")
    for name, fn in cases(rng):
        tc, oc = _best(lambda: fn("compiled"), args.repeat)
        tp, op = _best(lambda: fn("python"), args.repeat)
        d = _diff(oc, op)
        results.append({"kernel": name, "compiled_s": tc, "python_s": tp, "max_abs_diff": d})
        print(f"{name:34s} {tc:11.4f} {tp:11.4f} {tp / tc:8.1f} {d:11.2e}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(results, fh, indent=2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
