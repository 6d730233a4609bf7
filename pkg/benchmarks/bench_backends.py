"""Benchmark the numba kernels against the pure-numpy fallback.

Times the two hot paths (noisy-batch label counting, as used by prediction
distribution estimation, and mini-batch SGD training) plus one end-to-end
pipeline run per backend.

Usage: python benchmarks/bench_backends.py [--quick]
"""

import argparse
import math
import os
import time

import numpy as np


def timeit(fn, repeats):
    fn()  # warm up (numba compilation / cache load)
    best = math.inf
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def bench_kernels(repeats):
    from certdw import _kernels_numba as nb
    from certdw import _kernels_numpy as npk

    rng = np.random.default_rng(0)
    d, h, k = 192, 32, 4
    m = 1024          # default Monte Carlo draws per prediction distribution
    n, epochs = 320, 100  # default toy training job

    noisy = rng.standard_normal((m, d))
    wt = rng.standard_normal((d, k))
    b = rng.standard_normal(k)
    w1t = rng.standard_normal((d, h)) * 0.1
    b1 = np.zeros(h)
    w2t = rng.standard_normal((h, k)) * 0.2
    b2 = np.zeros(k)
    xs = rng.random((n, d))
    ys = rng.integers(0, k, n).astype(np.int64)
    order = np.stack([rng.permutation(n) for _ in range(epochs)]).astype(np.int64)

    def train_case(kernel):
        def run():
            kernel(xs, ys, order, w1t.copy(), b1.copy(), w2t.copy(), b2.copy(),
                   0.1, 32)
        return run

    cases = [
        ("linear_counts (1024 x 192)",
         lambda: nb.linear_counts(noisy, wt, b),
         lambda: npk.linear_counts(noisy, wt, b)),
        ("mlp_counts (1024 x 192 -> 32 -> 4)",
         lambda: nb.mlp_counts(noisy, w1t, b1, w2t, b2),
         lambda: npk.mlp_counts(noisy, w1t, b1, w2t, b2)),
        ("mlp_train (320 samples, 100 epochs)",
         train_case(nb.mlp_train), train_case(npk.mlp_train)),
        ("logistic_train (320 samples, 100 epochs)",
         train_case(lambda *a: nb.logistic_train(a[0], a[1], a[2], a[3], a[4],
                                                 a[7], a[8])),
         train_case(lambda *a: npk.logistic_train(a[0], a[1], a[2], a[3], a[4],
                                                  a[7], a[8]))),
    ]
    print(f"{'kernel':<42}{'numba':>12}{'numpy':>12}{'speedup':>10}")
    for name, fast, slow in cases:
        t_nb = timeit(fast, repeats)
        t_np = timeit(slow, repeats)
        print(f"{name:<42}{t_nb * 1e3:>10.2f}ms{t_np * 1e3:>10.2f}ms"
              f"{t_np / t_nb:>9.2f}x")


def bench_pipeline():
    import subprocess
    import sys

    script = (
        "import time; from certdw import ExperimentConfig, run_pipeline; "
        "from certdw.backend import backend_name; "
        "cfg = ExperimentConfig(master_seed=0); "
        "t = time.perf_counter(); run_pipeline(cfg, threads=4); "
        "print(f'{backend_name()}: {time.perf_counter() - t:.2f}s')"
    )
    print("\nend-to-end default pipeline (fresh process per backend):",
          flush=True)
    for backend in ("numba", "numpy"):
        env = dict(os.environ, CERTDW_BACKEND=backend)
        subprocess.run([sys.executable, "-c", script], env=env, check=True)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--quick", action="store_true",
                        help="fewer repeats, skip the pipeline comparison")
    args = parser.parse_args()
    bench_kernels(repeats=3 if args.quick else 10)
    if not args.quick:
        bench_pipeline()


if __name__ == "__main__":
    main()
