"""Time the numba and numpy paths of the hot kernels side by side.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import timeit

import numpy as np

from cqrelay import _kernels as K


def cases(rng):
    counters = np.arange(1_000_000, dtype=np.uint64)
    cdf = np.cumsum(rng.dirichlet(np.ones(8), size=200_000), axis=1)
    u = rng.random(200_000)
    p, q = rng.dirichlet(np.ones(4096)), rng.dirichlet(np.ones(4096))
    ev = rng.dirichlet(np.ones(16), size=100_000)
    return [
        ("keyed_uniforms 1e6", lambda: K.np_keyed_uniforms(7, 3, counters),
         lambda: K.nb_keyed_uniforms(np.uint64(7), np.uint64(3), counters)),
        ("sample_rows 2e5x8", lambda: K.np_sample_rows(cdf, u), lambda: K.nb_sample_rows(cdf, u)),
        ("neyman_pearson 4096", lambda: K.np_neyman_pearson(p, q, 0.9), lambda: K.nb_neyman_pearson(p, q, 0.9)),
        ("entropy_rows 1e5x16", lambda: K.np_entropy_rows(ev), lambda: K.nb_entropy_rows(ev)),
    ]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if K.numba is None:
        raise SystemExit("numba is not installed; only the numpy path is available")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<22}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}")
    for name, f_np, f_nb in cases(rng):
        f_nb()  # compile outside the timed region
        t_np = min(timeit.repeat(f_np, number=1, repeat=args.repeat)) * 1e3
        t_nb = min(timeit.repeat(f_nb, number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<22}{t_np:>10.2f}{t_nb:>10.2f}{t_np / t_nb:>8.1f}x")


if __name__ == "__main__":
    main()
