#!/usr/bin/env python3
"""Benchmark the compiled kernels against the pure-Python fallback.

Run after building the extension in place:

    python3 setup.py build_ext --inplace
    python3 benchmarks/bench_kernels.py
"""

import argparse
import time

import numpy as np

from duplexasr.kernels import pure
from duplexasr.numerics import rng_for, softmax

try:
    from duplexasr.kernels import _hotpath
except ImportError:
    _hotpath = None


def timeit(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def bench_ctc(backend, t_len, vocab, target_len, repeats):
    rng = rng_for(0, "bench-ctc")
    lp = np.log(softmax(rng.normal(0.0, 2.0, size=(t_len, vocab))))
    target = rng.integers(1, vocab, size=target_len)
    return timeit(lambda: backend.ctc_forward_backward(lp, target), repeats)


def bench_beam(backend, t_len, vocab, beam, repeats):
    rng = rng_for(0, "bench-beam")
    lp = np.log(softmax(rng.normal(0.0, 2.0, size=(t_len, vocab))))

    def run():
        beams = [((), 0.0, float("-inf"))]
        for row in lp:
            beams = backend.prefix_beam_step(beams, row, beam)

    return timeit(run, repeats)


def bench_levenshtein(backend, length, repeats):
    rng = rng_for(0, "bench-lev")
    a = rng.integers(1, 30, size=length)
    b = rng.integers(1, 30, size=length)
    return timeit(lambda: backend.levenshtein(a, b), repeats)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    cases = [
        ("ctc_fwd_bwd T=200 V=64 L=30", lambda b: bench_ctc(b, 200, 64, 30, args.repeats)),
        ("ctc_fwd_bwd T=50 V=8 L=8", lambda b: bench_ctc(b, 50, 8, 8, args.repeats)),
        ("prefix_beam T=200 V=64 beam=10", lambda b: bench_beam(b, 200, 64, 10, args.repeats)),
        ("prefix_beam T=50 V=8 beam=10", lambda b: bench_beam(b, 50, 8, 10, args.repeats)),
        ("levenshtein len=200", lambda b: bench_levenshtein(b, 200, args.repeats)),
    ]

    print(f"{'case':<34} {'pure':>10} {'compiled':>10} {'speedup':>8}")
    for name, runner in cases:
        t_pure = runner(pure)
        if _hotpath is None:
            print(f"{name:<34} {t_pure * 1e3:9.2f}ms {'n/a':>10} {'n/a':>8}")
            continue
        t_ext = runner(_hotpath)
        print(
            f"{name:<34} {t_pure * 1e3:9.2f}ms {t_ext * 1e3:9.2f}ms "
            f"{t_pure / t_ext:7.1f}x"
        )
    if _hotpath is None:
        print("\ncompiled extension not built; showing pure timings only")


if __name__ == "__main__":
    main()
