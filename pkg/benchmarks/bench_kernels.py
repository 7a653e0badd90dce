"""Compare the compiled and numpy kernel backends.

Usage: python benchmarks/bench_kernels.py [--d 1000] [--iters 300] [--repeats 5]

Times ``excess_rowsums`` on its own and full STACO1 iterations (linear
scorer) for each backend, reporting the best-of-repeats median in
microseconds and the speedup of the compiled path.
"""
import argparse
import time

import numpy as np

from staco import kernels
from staco.data import synth_gaussian
from staco.optim import StacoConfig, staco1_train
from staco.scorers import LinearScorer


def bench_rowsums(k, n_rows, n_neg, repeats, inner=200):
    rng = np.random.default_rng(0)
    hp = rng.normal(size=n_rows)
    hn = np.sort(rng.normal(size=n_neg))[::-1].copy()
    thr = rng.uniform(0.0, 1.0, size=n_rows)
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        for _ in range(inner):
            k.excess_rowsums(hp, hn, thr, n_neg // 2, 0, 0.5)
        best = min(best, (time.perf_counter() - t0) / inner)
    return best


def bench_staco1(ds, backend, S, B, iters, repeats):
    best = np.inf
    for rep in range(repeats):
        stamps = []
        cfg = StacoConfig(S=S, B=B, T=iters, eta=0.01, eval_every=10**9, seed=rep)
        staco1_train(ds, cfg, LinearScorer(ds.d), backend=backend,
                     callback=lambda t, s: stamps.append(time.perf_counter()))
        best = min(best, float(np.median(np.diff(stamps))))
    return best


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--d", type=int, default=1000)
    ap.add_argument("--iters", type=int, default=300)
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args(argv)

    names = ["python"] + (["cython"] if kernels.compiled_available() else [])
    if len(names) == 1:
        print("compiled extension not built; timing the numpy fallback only")

    print("excess_rowsums (us per call)")
    print(f"{'rows x neg':>12} " + " ".join(f"{n:>10}" for n in names) + f" {'speedup':>8}")
    for rows, neg in ((16, 32), (64, 128), (256, 512)):
        t = [bench_rowsums(kernels.get_backend(n), rows, neg, args.repeats) for n in names]
        sp = f"{t[0] / t[-1]:8.1f}" if len(t) > 1 else ""
        print(f"{rows:>5} x {neg:<4} " + " ".join(f"{1e6 * x:10.1f}" for x in t) + f" {sp}")

    ds = synth_gaussian(400, 2000, args.d, 1.0, seed=0)
    print(f"\nSTACO1 iteration, linear scorer, d={args.d} (us per iteration)")
    print(f"{'S+B':>12} " + " ".join(f"{n:>10}" for n in names) + f" {'speedup':>8}")
    for n in (20, 80, 320):
        t = [bench_staco1(ds, b, n // 2, n // 2, args.iters, args.repeats) for b in names]
        sp = f"{t[0] / t[-1]:8.1f}" if len(t) > 1 else ""
        print(f"{n:>12} " + " ".join(f"{1e6 * x:10.1f}" for x in t) + f" {sp}")


if __name__ == "__main__":
    main()
