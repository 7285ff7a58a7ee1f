"""16-bin viewpoint encoding: a coarse bin plus a residual off the bin center.

The unit circle splits into 16 edge-aligned bins of width 2*pi/16 starting at
angle 0, so bin = floor(wrap(yaw) / width) and the residual is measured from
the bin center. decode(encode(yaw)) reproduces yaw modulo 2*pi.
"""

from __future__ import annotations

import math

N_BINS = 16
BIN_WIDTH = 2.0 * math.pi / N_BINS

__all__ = ["N_BINS", "BIN_WIDTH", "viewpoint_encode", "viewpoint_decode"]


def viewpoint_encode(yaw: float) -> tuple:
    """(bin in 0..15, residual radians) for an arbitrary yaw."""
    wrapped = float(yaw) % (2.0 * math.pi)
    bin_idx = min(int(wrapped // BIN_WIDTH), N_BINS - 1)
    residual = wrapped - (bin_idx + 0.5) * BIN_WIDTH
    return bin_idx, residual


def viewpoint_decode(bin_idx: int, residual: float) -> float:
    """Angle in [0, 2*pi) reconstructed from a bin and its residual."""
    if not 0 <= int(bin_idx) < N_BINS:
        raise ValueError(f"bin must be in 0..{N_BINS - 1}, got {bin_idx}")
    return ((int(bin_idx) + 0.5) * BIN_WIDTH + float(residual)) % (2.0 * math.pi)
