"""
Finite-bit uniform quantizer with saturation and a lossless level codec.

A quantizer is described by ``QuantizerParams(bits, step, midpoint)``. Its
output set is ``midpoint + l * step`` for integer ``l`` with
``|l| <= 2**(bits-1) - 1``, i.e. ``2**bits - 1`` distinct values. On the wire
a quantized value travels as its level ``l`` in ``bits``-bit two's complement;
the code ``-2**(bits-1)`` is never produced and is rejected on decode.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

MAX_BITS = 53  # levels must stay exactly representable as doubles
LEVEL_TOL = 1e-6


@dataclass(frozen=True)
class QuantizerParams:
    bits: int
    step: float
    midpoint: float = 0.0

    def __post_init__(self):
        if not isinstance(self.bits, (int, np.integer)) or isinstance(self.bits, bool):
            raise TypeError("bits must be an integer")
        if not 2 <= self.bits <= MAX_BITS:
            raise ValueError(f"bits must be in [2, {MAX_BITS}], got {self.bits}")
        if not (math.isfinite(self.step) and self.step > 0):
            raise ValueError(f"step must be positive and finite, got {self.step}")
        if not math.isfinite(self.midpoint):
            raise ValueError(f"midpoint must be finite, got {self.midpoint}")

    @property
    def max_level(self) -> int:
        return (1 << (self.bits - 1)) - 1

    def with_midpoint(self, midpoint: float) -> QuantizerParams:
        return QuantizerParams(self.bits, self.step, midpoint)


def max_level(bits: int) -> int:
    return (1 << (bits - 1)) - 1


def range_limit(p: QuantizerParams) -> float:
    """Half-width of the non-saturating input range, ``(2**(b-1) - 1/2) * step``."""
    return ((1 << (p.bits - 1)) - 0.5) * p.step


def _round_half_away(t: float) -> int:
    if t >= 0:
        return int(math.floor(t + 0.5))
    return -int(math.floor(-t + 0.5))


def level_of(x: float, p: QuantizerParams) -> int:
    """Level index of ``quantize(x, p)``."""
    if not math.isfinite(x):
        raise ValueError(f"cannot quantize non-finite value {x!r}")
    lmax = (1 << (p.bits - 1)) - 1
    xbar = (lmax + 0.5) * p.step
    if x >= p.midpoint + xbar:
        return lmax
    if x <= p.midpoint - xbar:
        return -lmax
    level = _round_half_away((x - p.midpoint) / p.step)
    # float division can land exactly on the half-integer just inside the range
    return max(-lmax, min(lmax, level))


def quantize(x: float, p: QuantizerParams) -> float:
    """Nearest grid point to ``x``, clamped to the outermost levels.

    Ties are rounded away from the midpoint, which keeps the staircase
    symmetric about it.
    """
    return p.midpoint + level_of(x, p) * p.step


def to_level(q: float, p: QuantizerParams) -> int:
    """Level index of an on-grid value ``q``.

    Raises:
        ValueError: if ``q`` is not on the grid of ``p`` or its level is out
            of range. Either means sender and receiver grids disagree.
    """
    if not math.isfinite(q):
        raise ValueError(f"non-finite grid value {q!r}")
    t = (q - p.midpoint) / p.step
    level = round(t)
    # grid points are computed as midpoint + level*step, so allow for the
    # rounding of that sum when step is small next to the midpoint
    slack = LEVEL_TOL * p.step + 4 * math.ulp(max(abs(q), abs(p.midpoint)))
    if abs(p.midpoint + level * p.step - q) > slack:
        raise ValueError(f"value {q!r} is off the grid (offset {t!r} steps)")
    if abs(level) > p.max_level:
        raise ValueError(f"level {level} out of range for {p.bits} bits")
    return int(level)


def from_level(level: int, p: QuantizerParams) -> float:
    if abs(level) > p.max_level:
        raise ValueError(f"level {level} out of range for {p.bits} bits")
    return p.midpoint + level * p.step


def quantize_array(x, bits, step, midpoint=0.0) -> np.ndarray:
    """Vectorised :func:`quantize`; every argument broadcasts elementwise."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("cannot quantize non-finite values")
    bits = np.asarray(bits, dtype=np.int64)
    step = np.asarray(step, dtype=float)
    midpoint = np.asarray(midpoint, dtype=float)
    lmax = (np.left_shift(1, bits - 1) - 1).astype(float)
    xbar = (lmax + 0.5) * step
    t = (x - midpoint) / step
    level = np.sign(t) * np.floor(np.abs(t) + 0.5)
    level = np.clip(level, -lmax, lmax)
    level = np.where(x >= midpoint + xbar, lmax, level)
    level = np.where(x <= midpoint - xbar, -lmax, level)
    return midpoint + level * step


def pack_levels(levels: Sequence[int], bits_each: int) -> bytes:
    """Pack signed levels as ``bits_each``-bit two's-complement codes.

    The stream is MSB-first and the trailing byte is zero-padded, so the
    output has ``ceil(len(levels) * bits_each / 8)`` bytes.
    """
    if not 2 <= bits_each <= 63:
        raise ValueError(f"bits_each must be in [2, 63], got {bits_each}")
    arr = np.asarray(levels, dtype=np.int64).reshape(-1)
    if arr.size == 0:
        return b""
    lmax = (1 << (bits_each - 1)) - 1
    if np.any(np.abs(arr) > lmax):
        bad = arr[np.abs(arr) > lmax][0]
        raise ValueError(f"level {bad} does not fit in {bits_each} bits")
    codes = arr.astype(np.uint64) & np.uint64((1 << bits_each) - 1)
    shifts = np.arange(bits_each - 1, -1, -1, dtype=np.uint64)
    bitmat = ((codes[:, None] >> shifts[None, :]) & np.uint64(1)).astype(np.uint8)
    return np.packbits(bitmat.reshape(-1)).tobytes()


def unpack_levels(data: bytes, count: int, bits_each: int) -> list[int]:
    """Inverse of :func:`pack_levels`."""
    if not 2 <= bits_each <= 63:
        raise ValueError(f"bits_each must be in [2, 63], got {bits_each}")
    if count == 0:
        return []
    need = (count * bits_each + 7) // 8
    if len(data) != need:
        raise ValueError(f"expected {need} bytes for {count} levels, got {len(data)}")
    bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8))[: count * bits_each]
    bitmat = bits.reshape(count, bits_each).astype(np.int64)
    weights = np.left_shift(np.int64(1), np.arange(bits_each - 1, -1, -1, dtype=np.int64))
    codes = bitmat @ weights
    half = 1 << (bits_each - 1)
    if np.any(codes == half):
        raise ValueError("reserved level code encountered")
    values = np.where(codes >= half, codes - (1 << bits_each), codes)
    return values.tolist()
