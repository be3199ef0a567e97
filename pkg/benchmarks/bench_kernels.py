#!/usr/bin/env python3
"""Benchmark the numba kernels against the pure-numpy fallbacks.

Times each kernel pair on the same random inputs and prints a speedup table.
Numba jit compilation happens on a warmup call and is excluded from timing.

Usage: python3 benchmarks/bench_kernels.py [--size N] [--bits B] [--repeats R]
"""

import argparse
import timeit

import numpy as np

from elasticq import kernels


def _time(fn, repeats):
    return min(timeit.repeat(fn, number=1, repeat=repeats))


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--size", type=int, default=2_000_000, help="elements per kernel input")
    ap.add_argument("--bits", type=int, default=4, help="code width for pack/unpack")
    ap.add_argument("--group-size", type=int, default=64)
    ap.add_argument("--repeats", type=int, default=5, help="timing repeats (best is kept)")
    args = ap.parse_args()

    if not kernels.HAVE_NUMBA:
        ap.error("numba backend unavailable (is ELASTICQ_NUMBA=0 set?)")

    rng = np.random.default_rng(0)
    flat = rng.standard_normal(args.size).astype(np.float32)
    gs = args.group_size
    max_code = 2 ** args.bits - 1

    mins, maxs = kernels.np_group_minmax(flat, gs)
    scales = ((maxs - mins) / np.float32(max_code)).astype(np.float32)
    scales[scales == 0] = 1.0
    zeros = mins
    codes = kernels.np_quantize_codes(flat, scales, zeros, gs, max_code)
    packed = kernels.np_pack_codes(codes, args.bits)

    cases = [
        ("group_minmax", (flat, gs)),
        ("quantize_codes", (flat, scales, zeros, gs, max_code)),
        ("dequantize_codes", (codes, scales, zeros, gs)),
        ("pack_codes", (codes, args.bits)),
        ("unpack_codes", (packed, args.bits, codes.size)),
    ]

    print(f"{args.size:,} elements, {args.bits}-bit codes, group size {gs}, "
          f"best of {args.repeats}\n")
    print(f"{'kernel':<18} {'numpy (ms)':>12} {'numba (ms)':>12} {'speedup':>9}")
    for name, arglist in cases:
        np_fn = getattr(kernels, f"np_{name}")
        nb_fn = getattr(kernels, f"nb_{name}")
        nb_fn(*arglist)  # warmup: trigger jit compilation
        np_out, nb_out = np_fn(*arglist), nb_fn(*arglist)
        if not isinstance(np_out, tuple):
            np_out, nb_out = (np_out,), (nb_out,)
        assert all(
            np.array_equal(a, b) for a, b in zip(np_out, nb_out)
        ), f"{name}: backend outputs differ"
        t_np = _time(lambda: np_fn(*arglist), args.repeats) * 1e3
        t_nb = _time(lambda: nb_fn(*arglist), args.repeats) * 1e3
        print(f"{name:<18} {t_np:>12.2f} {t_nb:>12.2f} {t_np / t_nb:>8.1f}x")


if __name__ == "__main__":
    main()
