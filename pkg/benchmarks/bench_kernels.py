"""Throughput of the SAR conversion kernels: numba vs the numpy fallback.

    python benchmarks/bench_kernels.py [--n 200000] [--repeat 5]

Both backends are run on the same inputs and must return identical codes.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from crcim import _accel
from crcim.adc import nominal_bit_weights
from crcim.kernels import N_BITS, sar_batch, sar_batch_decision, vote_pmf_coeffs

N_UNVOTED, REPEATS, SIGMA = 7, 6, 0.89 / 1023.0


def _best(fn, repeat):
    fn()  # warm-up (JIT compile for numba)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=200_000, help="conversions per call")
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    rng = np.random.default_rng(0)
    n = args.n
    values = rng.random(n)
    cols = np.zeros(n, dtype=np.int64)
    bitw = np.asarray(nominal_bit_weights(), dtype=np.float64).reshape(1, N_BITS)
    noise = rng.standard_normal((n, N_UNVOTED + (N_BITS - N_UNVOTED) * REPEATS))
    unif = rng.random((n, N_BITS))
    vote_pmf_coeffs(REPEATS)

    samplers = {
        "comparator": lambda b: sar_batch(values, cols, bitw, noise, SIGMA, 0.5, N_UNVOTED, REPEATS, backend=b),
        "decision": lambda b: sar_batch_decision(values, cols, bitw, unif, SIGMA, 0.5, N_UNVOTED, REPEATS,
                                                 backend=b),
    }
    backends = ["numpy"] + (["numba"] if _accel.HAS_NUMBA else [])
    print(f"{n} conversions per call, CB on, best of {args.repeat}")
    print(f"{'sampler':<11} {'backend':<7} {'seconds':>9} {'Mconv/s':>9} {'speedup':>8}")
    for name, call in samplers.items():
        base, ref = None, None
        for b in backends:
            t, codes = _best(lambda: call(b), args.repeat)
            if ref is None:
                base, ref = t, codes
            elif not np.array_equal(codes, ref):
                raise SystemExit(f"{name}: {b} codes differ from numpy")
            print(f"{name:<11} {b:<7} {t:9.4f} {n / t / 1e6:9.2f} {base / t:7.1f}x")


if __name__ == "__main__":
    main()
