"""Time the compiled inner loops against the pure-Python ones.

    python3 benchmarks/bench_kernels.py [--repeat 3]
"""
import argparse
import time

import numpy as np

from polybandit import _kernels_py as py

try:
    from polybandit import _kernels as cy
except ImportError:
    cy = None


def ucb_case(K=50, T=20000, seed=0):
    rng = np.random.default_rng(seed)
    means, noise = rng.uniform(0, 1, K), rng.standard_normal(T)

    def go(mod):
        mod.ucb_loop(means, noise, 12.0, np.zeros(K, dtype=np.int64), np.zeros(K))
    return f"ucb K={K} T={T}", go


def linucb_case(n=90, D=45, T=3000, seed=0):
    rng = np.random.default_rng(seed)
    Phi = rng.standard_normal((n, D))
    means, noise, betas = rng.uniform(0, 1, n), 0.1 * rng.standard_normal(T), np.ones(T)

    def go(mod):
        mod.linucb_loop(Phi, means, noise, betas, np.eye(D), np.zeros(D), np.zeros(n),
                        np.einsum("ij,ij->i", Phi, Phi))
    return f"linucb n={n} D={D} T={T}", go


def best_of(fn, mod, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(mod)
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    print(f"{'case':<28}{'python s':>10}{'cython s':>10}{'speedup':>9}")
    for name, fn in (ucb_case(), linucb_case()):
        tp = best_of(fn, py, args.repeat)
        if cy is None:
            print(f"{name:<28}{tp:>10.4f}{'n/a':>10}{'n/a':>9}")
            continue
        tc = best_of(fn, cy, args.repeat)
        print(f"{name:<28}{tp:>10.4f}{tc:>10.4f}{tp / tc:>8.1f}x")


if __name__ == "__main__":
    main()
