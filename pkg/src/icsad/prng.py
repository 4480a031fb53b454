"""Counter-based SplitMix64 noise source.

Draw ``i`` of a stream is a pure function of ``(seed, i)``, so the same
fixtures can be regenerated bit-for-bit in any language with 64-bit
unsigned arithmetic:

    z = seed + (i + 1) * 0x9E3779B97F4A7C15          (mod 2**64)
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    z = z ^ (z >> 31)
    uniform = (z >> 11) * 2**-53                      in [0, 1)

Normal draw ``j`` uses uniforms ``2j`` and ``2j + 1`` with the Box-Muller
cosine branch: ``sqrt(-2 ln(1 - u0)) * cos(2 pi u1)``.
"""
import numpy as np

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def splitmix64(seed, counters):
    z = np.uint64(seed & 0xFFFFFFFFFFFFFFFF) + (np.asarray(counters, dtype=np.uint64) + np.uint64(1)) * _GAMMA
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def uniforms(seed, start, count):
    z = splitmix64(seed, np.arange(start, start + count, dtype=np.uint64))
    return (z >> np.uint64(11)).astype(np.float64) * 2.0**-53


def normals(seed, start, count):
    u = uniforms(seed, 2 * start, 2 * count)
    return np.sqrt(-2.0 * np.log1p(-u[0::2])) * np.cos(2.0 * np.pi * u[1::2])
