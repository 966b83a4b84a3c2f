"""Compare the compiled and pure-numpy kernel backends on the two hot paths.

Runs each backend in a subprocess (the choice is frozen at import time) and
reports wall-clock seconds for a regularized-transport sweep and a batch of
pairwise squared-distance calls.

    python3 benchmarks/bench_kernels.py [--instances 200] [--reps 20]
"""

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def transport_sweep(instances: int, seed: int) -> float:
    from aspectsim.ot import DistanceMatrix, Marginals, sinkhorn

    rng = np.random.default_rng(seed)
    start = time.perf_counter()
    for _ in range(instances):
        n, m = int(rng.integers(1, 9)), int(rng.integers(1, 9))
        dist = 3.0 * rng.random((n, m))
        x_p = rng.random(n) + 0.05
        x_q = rng.random(m) + 0.05
        d = DistanceMatrix(values=dist)
        marg = Marginals(x_p=x_p / x_p.sum(), x_q=x_q / x_q.sum())
        for lam in (5.0, 10.0, 20.0, 50.0, 100.0, 200.0):
            sinkhorn(d, marg, lam=lam, max_iters=200000, tol=1e-12)
    return time.perf_counter() - start


def pairwise_batch(reps: int, seed: int) -> float:
    from aspectsim import kernels

    rng = np.random.default_rng(seed)
    a = np.ascontiguousarray(rng.normal(size=(2000, 64)))
    b = np.ascontiguousarray(rng.normal(size=(3000, 64)))
    kernels.pairwise_sqdist(a, b)  # warm up
    start = time.perf_counter()
    for _ in range(reps):
        kernels.pairwise_sqdist(a, b)
    return time.perf_counter() - start


def run_worker(args: argparse.Namespace) -> int:
    from aspectsim import kernels

    result = {
        "backend": kernels.BACKEND,
        "sweep_s": transport_sweep(args.instances, args.seed),
        "pairwise_s": pairwise_batch(args.reps, args.seed),
    }
    print(json.dumps(result))
    return 0


def run_backend(name: str, args: argparse.Namespace) -> dict | None:
    env = dict(os.environ, ASPECTSIM_BACKEND=name)
    cmd = [
        sys.executable, os.path.abspath(__file__), "--worker",
        "--instances", str(args.instances),
        "--reps", str(args.reps),
        "--seed", str(args.seed),
    ]
    proc = subprocess.run(cmd, env=env, capture_output=True, text=True)
    if proc.returncode != 0:
        print(f"{name}: unavailable ({proc.stderr.strip().splitlines()[-1]})")
        return None
    return json.loads(proc.stdout)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--instances", type=int, default=200,
                        help="random transport instances per sweep")
    parser.add_argument("--reps", type=int, default=20,
                        help="pairwise distance repetitions")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--worker", action="store_true", help=argparse.SUPPRESS)
    args = parser.parse_args(argv)

    if args.worker:
        return run_worker(args)

    results = {name: run_backend(name, args) for name in ("pure", "compiled")}
    print(f"{'backend':<10} {'transport sweep':>16} {'pairwise batch':>15}")
    for name, res in results.items():
        if res is not None:
            print(f"{name:<10} {res['sweep_s']:>15.2f}s {res['pairwise_s']:>14.2f}s")
    pure, compiled = results["pure"], results["compiled"]
    if pure and compiled:
        print(f"{'speedup':<10} {pure['sweep_s'] / compiled['sweep_s']:>15.1f}x "
              f"{pure['pairwise_s'] / compiled['pairwise_s']:>14.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
