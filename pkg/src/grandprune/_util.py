"""Small helpers shared across modules: fraction-to-count rounding and seed mixing."""

from decimal import Decimal
import math

MASK64 = (1 << 64) - 1


def floor_count(fraction, n):
    """Return ``floor(fraction * n)`` using the decimal value of ``fraction``.

    Plain float multiplication gives ``floor(0.29 * 100) == 28``; going
    through the shortest decimal repr makes 0.29 mean exactly 29/100.
    """
    return math.floor(Decimal(repr(float(fraction))) * n)


def splitmix64(x):
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def mix(*values):
    """Fold integers into one 64-bit seed.

    ``h = 0; for v in values: h = splitmix64(h ^ (v mod 2**64))``. Order matters,
    and negative values are taken modulo 2**64.
    """
    h = 0
    for v in values:
        h = splitmix64(h ^ (int(v) & MASK64))
    return h


def fnv1a64(data):
    """64-bit FNV-1a over ``data`` (bytes)."""
    h = 0xCBF29CE484222325
    for byte in data:
        h ^= byte
        h = (h * 0x100000001B3) & MASK64
    return h
