"""Quantization schemes: real values <-> integer levels <-> bin bounds."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class QuantizationScheme:
    """Ordered bin boundaries ``b_0 < b_1 < ... < b_q``.

    Level ``l`` (1-based) occupies the right-closed interval ``(b_{l-1}, b_l]``.
    The outer boundaries are always ``-inf`` and ``+inf`` so every real
    number falls in exactly one bin.
    """

    boundaries: tuple[float, ...]

    def __post_init__(self):
        b = np.asarray(self.boundaries, dtype=float)
        if b.ndim != 1 or b.size < 3:
            raise ValueError("a scheme needs at least two levels (three boundaries)")
        if b[0] != -np.inf or b[-1] != np.inf:
            raise ValueError("first boundary must be -inf and last must be +inf")
        if not np.all(np.diff(b) > 0):
            raise ValueError("boundaries must be strictly increasing")
        object.__setattr__(self, "boundaries", tuple(float(v) for v in b))

    @property
    def num_levels(self) -> int:
        return len(self.boundaries) - 1

    def quantize(self, x):
        """Map real value(s) to level(s) in ``1..num_levels``."""
        return quantize(x, self)

    def bounds(self, level):
        return bounds(level, self)


def build_uniform_scheme(num_levels: int) -> QuantizationScheme:
    """Integer levels ``1..num_levels`` separated at the half-integers."""
    if int(num_levels) != num_levels or num_levels < 2:
        raise ValueError(f"num_levels must be an integer >= 2, got {num_levels!r}")
    num_levels = int(num_levels)
    interior = np.arange(1, num_levels) + 0.5
    return QuantizationScheme((-np.inf, *interior.tolist(), np.inf))


def quantize(x, scheme: QuantizationScheme):
    """Return the unique level ``l`` with ``b_{l-1} < x <= b_l``.

    Accepts a scalar or an array; scalars come back as ``int``.
    """
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError("quantize requires finite input")
    interior = np.asarray(scheme.boundaries[1:-1])
    levels = np.searchsorted(interior, arr, side="left") + 1
    if levels.ndim == 0:
        return int(levels)
    return levels.astype(np.int64)


def bounds(level, scheme: QuantizationScheme):
    """Lower and upper bin bounds ``(b_{level-1}, b_level)`` for level(s)."""
    lev = np.asarray(level)
    if not np.issubdtype(lev.dtype, np.integer):
        if not np.all(np.equal(np.mod(lev, 1), 0)):
            raise ValueError("levels must be integers")
        lev = lev.astype(np.int64)
    if np.any(lev < 1) or np.any(lev > scheme.num_levels):
        raise ValueError(f"level out of range 1..{scheme.num_levels}")
    b = np.asarray(scheme.boundaries)
    lo, hi = b[lev - 1], b[lev]
    if lev.ndim == 0:
        return float(lo), float(hi)
    return lo, hi
