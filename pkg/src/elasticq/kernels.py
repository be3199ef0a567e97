"""Hot numeric kernels: group min/max, code rounding, bit packing.

Each kernel has a numba ``@njit`` implementation and a pure-numpy fallback.
The backend is chosen once at import time: set ``ELASTICQ_NUMBA=0`` to force
the numpy path (or when numba is unavailable it is used automatically).
Both paths produce bit-identical outputs; ``tests/test_kernels.py`` checks
parity and ``benchmarks/bench_kernels.py`` compares their speed.
"""

from __future__ import annotations

import os

import numpy as np

_FLAG = os.environ.get("ELASTICQ_NUMBA", "1")
try:
    if _FLAG == "0":
        raise ImportError
    from numba import njit

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False

    def njit(*args, **kwargs):  # no-op decorator so the nb_* defs still import
        def wrap(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return wrap


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------

def np_group_minmax(flat: np.ndarray, group_size: int):
    starts = np.arange(0, flat.size, group_size)
    mins = np.minimum.reduceat(flat, starts)
    maxs = np.maximum.reduceat(flat, starts)
    return mins.astype(np.float32), maxs.astype(np.float32)


def np_quantize_codes(flat, scales, zeros, group_size, max_code):
    idx = np.arange(flat.size) // group_size
    x = (flat - zeros[idx]) / scales[idx]
    c = np.floor(x + np.float32(0.5))
    return np.clip(c, 0, max_code).astype(np.uint8)


def np_dequantize_codes(codes, scales, zeros, group_size):
    idx = np.arange(codes.size) // group_size
    return (codes.astype(np.float32) * scales[idx] + zeros[idx]).astype(np.float32)


def np_pack_codes(codes: np.ndarray, bits: int) -> np.ndarray:
    # LSB-first within each code, codes contiguous in the bit stream
    bitmat = (codes[:, None] >> np.arange(bits, dtype=np.uint8)) & 1
    return np.packbits(bitmat.reshape(-1), bitorder="little")


def np_unpack_codes(packed: np.ndarray, bits: int, n: int) -> np.ndarray:
    allbits = np.unpackbits(packed, count=n * bits, bitorder="little")
    weights = np.left_shift(1, np.arange(bits))
    return (allbits.reshape(n, bits) * weights).sum(axis=1).astype(np.uint8)


# ---------------------------------------------------------------------------
# numba implementations (loop forms of the above)
# ---------------------------------------------------------------------------

@njit(cache=True)
def nb_group_minmax(flat, group_size):
    n = flat.size
    ng = (n + group_size - 1) // group_size
    mins = np.empty(ng, np.float32)
    maxs = np.empty(ng, np.float32)
    for g in range(ng):
        lo = g * group_size
        hi = min(lo + group_size, n)
        mn = flat[lo]
        mx = flat[lo]
        for i in range(lo + 1, hi):
            v = flat[i]
            if v < mn:
                mn = v
            if v > mx:
                mx = v
        mins[g] = mn
        maxs[g] = mx
    return mins, maxs


@njit(cache=True)
def nb_quantize_codes(flat, scales, zeros, group_size, max_code):
    n = flat.size
    out = np.empty(n, np.uint8)
    half = np.float32(0.5)
    for i in range(n):
        g = i // group_size
        x = (flat[i] - zeros[g]) / scales[g]
        c = np.floor(x + half)
        if c < 0:
            c = 0
        elif c > max_code:
            c = max_code
        out[i] = np.uint8(c)
    return out


@njit(cache=True)
def nb_dequantize_codes(codes, scales, zeros, group_size):
    n = codes.size
    out = np.empty(n, np.float32)
    for i in range(n):
        g = i // group_size
        out[i] = np.float32(codes[i]) * scales[g] + zeros[g]
    return out


@njit(cache=True)
def nb_pack_codes(codes, bits):
    n = codes.size
    nbytes = (n * bits + 7) // 8
    out = np.zeros(nbytes, np.uint8)
    pos = 0
    for i in range(n):
        c = codes[i]
        for b in range(bits):
            if (c >> b) & 1:
                out[pos >> 3] |= np.uint8(1 << (pos & 7))
            pos += 1
    return out


@njit(cache=True)
def nb_unpack_codes(packed, bits, n):
    out = np.zeros(n, np.uint8)
    pos = 0
    for i in range(n):
        c = 0
        for b in range(bits):
            if (packed[pos >> 3] >> (pos & 7)) & 1:
                c |= 1 << b
            pos += 1
        out[i] = np.uint8(c)
    return out


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

if HAVE_NUMBA:
    group_minmax = nb_group_minmax
    quantize_codes = nb_quantize_codes
    dequantize_codes = nb_dequantize_codes
    pack_codes = nb_pack_codes
    unpack_codes = nb_unpack_codes
else:
    group_minmax = np_group_minmax
    quantize_codes = np_quantize_codes
    dequantize_codes = np_dequantize_codes
    pack_codes = np_pack_codes
    unpack_codes = np_unpack_codes


def backend() -> str:
    return "numba" if HAVE_NUMBA else "numpy"
