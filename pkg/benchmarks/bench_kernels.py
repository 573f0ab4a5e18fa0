"""Compare the numba kernels with their pure-numpy twins.

    python3 benchmarks/bench_kernels.py [--reps 20]

Each kernel is run once first (JIT compile, warm caches), then timed over
``--reps`` repetitions; the table reports median milliseconds per call.
Outputs of both versions are checked for agreement before timing.
"""
import argparse
import time

import numpy as np

from mmkws import kernels
from mmkws._accel import backend_name


def median_ms(fn, reps):
    fn()
    samples = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        samples.append((time.perf_counter() - t0) * 1e3)
    return float(np.median(samples))


def mining_case(rng, n_cands=2000, lo=6, hi=30):
    lengths = rng.integers(lo, hi, n_cands)
    offsets = np.zeros(n_cands + 1, dtype=np.int64)
    np.cumsum(lengths, out=offsets[1:])
    flat = rng.integers(0, 39, int(offsets[-1])).astype(np.int64)
    query = rng.integers(0, 39, 14).astype(np.int64)
    return query, flat, offsets


def gru_case(rng, B=24, T=60, H=16):
    gx = rng.standard_normal((B, T, 3 * H))
    wh = rng.standard_normal((H, 3 * H)) / np.sqrt(H)
    bh = 0.1 * rng.standard_normal(3 * H)
    lengths = rng.integers(T // 2, T + 1, B).astype(np.int64)
    return gx, wh, bh, lengths


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--reps", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(args.seed)
    print(f"dispatch backend: {backend_name()}")

    q, flat, off = mining_case(rng)
    a, b = q, flat[off[0]:off[1]]
    gx, wh, bh, lengths = gru_case(rng)
    cache = kernels.gru_forward_loop(gx, wh, bh, lengths)
    dh = rng.standard_normal((gx.shape[0], wh.shape[0]))

    assert kernels.levenshtein_loop(a, b, -1) == kernels.levenshtein_np(a, b)
    assert np.array_equal(kernels.topk_scan_loop(q, flat, off, 10), kernels.topk_scan_np(q, flat, off, 10))
    for x, y in zip(cache, kernels.gru_forward_np(gx, wh, bh, lengths)):
        np.testing.assert_allclose(x, y, rtol=1e-12, atol=1e-12)

    cases = [
        ("levenshtein (one pair)", lambda: kernels.levenshtein_loop(a, b, -1),
         lambda: kernels.levenshtein_np(a, b)),
        ("distances (2000 phrases)", lambda: kernels._distances_to_loop(q, flat, off, -1),
         lambda: kernels._distances_to_np(q, flat, off, -1)),
        ("top-10 pruned scan", lambda: kernels.topk_scan_loop(q, flat, off, 10),
         lambda: kernels.topk_scan_np(q, flat, off, 10)),
        ("GRU forward B=24 T=60", lambda: kernels.gru_forward_loop(gx, wh, bh, lengths),
         lambda: kernels.gru_forward_np(gx, wh, bh, lengths)),
        ("GRU backward B=24 T=60", lambda: kernels.gru_backward_loop(dh, wh, lengths, *cache),
         lambda: kernels.gru_backward_np(dh, wh, lengths, *cache)),
    ]
    print(f"{'kernel':28s} {'loop ms':>10s} {'numpy ms':>10s} {'speedup':>8s}")
    for name, loop, vec in cases:
        t_loop, t_np = median_ms(loop, args.reps), median_ms(vec, args.reps)
        print(f"{name:28s} {t_loop:10.3f} {t_np:10.3f} {t_np / t_loop:8.1f}x")


if __name__ == "__main__":
    main()
