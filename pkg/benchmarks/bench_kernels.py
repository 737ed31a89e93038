"""Time the numba and numpy variants of each kernel.

    python3 benchmarks/bench_kernels.py [--repeat N]

Numba variants are warmed up (compiled) before timing.
"""

import argparse
import timeit

import numpy as np

from summrerank import _kernels as K


def cases(rng):
    a = rng.integers(0, 50, size=400).astype(np.int64)
    b = rng.integers(0, 50, size=400).astype(np.int64)
    yield "lcs_length (400 x 400)", (K.lcs_length_nb, K.lcs_length_np), (a, b)

    table = rng.standard_normal((5000, 32))
    lens = rng.integers(5, 30, size=256)
    offsets = np.concatenate([[0], np.cumsum(lens)]).astype(np.int64)
    tokens = rng.integers(0, 5000, size=int(offsets[-1])).astype(np.int64)
    yield "mean_pool (256 segments, d=32)", (K.mean_pool_nb, K.mean_pool_np), (table, tokens, offsets)

    grad_out = rng.standard_normal((256, 32))

    def bwd(fn):
        return lambda g, t, o: fn(g, t, o, np.zeros_like(table))

    yield (
        "mean_pool_backward (256 segments)",
        (bwd(K.mean_pool_backward_nb), bwd(K.mean_pool_backward_np)),
        (grad_out, tokens, offsets),
    )

    q = np.sort(rng.uniform(size=16))[::-1].copy()
    s = rng.standard_normal(16)
    yield "rank_hinge (m=16)", (K.rank_hinge_nb, K.rank_hinge_np), (s, q, 1.0)

    order = rng.permutation(16).astype(np.int64)
    lex, sem = rng.uniform(size=16), rng.uniform(size=16)
    yield "pair_counts (m=16)", (K.pair_counts_nb, K.pair_counts_np), (order, lex, sem)


def main():
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--repeat", type=int, default=200)
    args = parser.parse_args()
    rng = np.random.default_rng(0)
    print(f"numba available: {K.NUMBA_AVAILABLE}; public names use numba: {K.USE_NUMBA}")
    print(f"{'kernel':38s} {'numba us':>10s} {'numpy us':>10s} {'speedup':>8s}")
    for name, (nb, np_), inputs in cases(rng):
        nb(*inputs)  # compile
        t_nb = min(timeit.repeat(lambda: nb(*inputs), number=1, repeat=args.repeat)) * 1e6
        t_np = min(timeit.repeat(lambda: np_(*inputs), number=1, repeat=args.repeat)) * 1e6
        print(f"{name:38s} {t_nb:10.1f} {t_np:10.1f} {t_np / t_nb:7.1f}x")


if __name__ == "__main__":
    main()
