"""Scalar quantization math: scales, zero-points, and fixed-point rescaling.

Conventions used throughout the package:

* quantize:    q = clamp(floor(r / S) - Z, lo, hi)
* dequantize:  r ~= S * (q + Z)
* zero-point:  Z = floor(alpha / S) for asymmetric ranges, 0 for symmetric
* rounding in fixed-point rescaling: half away from zero

All operations here are pure functions and safe for concurrent use.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

INT32_MIN = -(2**31)
INT32_MAX = 2**31 - 1

# Shifts beyond 31 are still a single shift on the 64-bit product and are
# needed to hold the relative-error bound for very small combined scales.
MAX_SHIFT = 47

DEGENERATE_EPS = 1e-12
DEGENERATE_WIDEN = 1e-6


class DegenerateRangeWarning(UserWarning):
    """Raised (as a warning) when a clipping range collapses to a point."""


class FixedPointOverflowError(ValueError):
    """A combined scale is too large to represent as mantissa * 2**-shift."""


@dataclass(frozen=True)
class QuantParams:
    """Scale, zero-point, bit-width and clipping range for one tensor site."""

    scale: float
    zero_point: int
    bits: int
    signed: bool
    alpha: float
    beta: float

    def __post_init__(self):
        if not (2 <= self.bits <= 16):
            raise ValueError(f"bits must be in [2, 16], got {self.bits}")
        if not self.scale > 0:
            raise ValueError(f"scale must be positive, got {self.scale}")
        if not self.alpha < self.beta:
            raise ValueError(f"alpha < beta required, got [{self.alpha}, {self.beta}]")
        if self.signed and self.zero_point != 0:
            raise ValueError("symmetric (signed) mode requires zero_point == 0")

    @property
    def range_lo(self) -> int:
        return -(2 ** (self.bits - 1) - 1) if self.signed else 0

    @property
    def range_hi(self) -> int:
        return 2 ** (self.bits - 1) - 1 if self.signed else 2**self.bits - 1


@dataclass(frozen=True)
class FixedPointScale:
    """Integer mantissa/shift pair approximating a real scale M ~= mantissa * 2**-shift."""

    mantissa: int
    shift: int

    def __post_init__(self):
        if not (0 <= self.mantissa < 2**31):
            raise ValueError(f"mantissa out of range: {self.mantissa}")
        if not (0 <= self.shift <= MAX_SHIFT):
            raise ValueError(f"shift out of range: {self.shift}")

    @property
    def value(self) -> float:
        return self.mantissa * 2.0 ** (-self.shift)


def compute_qparams(alpha: float, beta: float, bits: int,
                    mode: str = "asymmetric") -> QuantParams:
    """Derive quantization parameters from a clipping range.

    Asymmetric mode maps [alpha, beta] onto the unsigned range [0, 2**bits - 1];
    symmetric mode forces the range to [-m, m] with m = max(|alpha|, |beta|) and
    uses the restricted signed range so that negation stays representable.

    A degenerate range (beta - alpha below 1e-12) is widened rather than
    rejected, so calibration on constant tensors never aborts; a
    DegenerateRangeWarning is emitted.
    """
    if mode not in ("asymmetric", "symmetric"):
        raise ValueError(f"unknown mode {mode!r}")
    if not (2 <= bits <= 16):
        raise ValueError(f"bits must be in [2, 16], got {bits}")
    if beta < alpha:
        raise ValueError(f"alpha <= beta required, got [{alpha}, {beta}]")

    if beta - alpha < DEGENERATE_EPS:
        warnings.warn(
            f"degenerate clipping range [{alpha}, {beta}] widened by "
            f"{DEGENERATE_WIDEN}", DegenerateRangeWarning, stacklevel=2)
        alpha, beta = alpha - DEGENERATE_WIDEN, alpha + DEGENERATE_WIDEN

    if mode == "symmetric":
        m = max(abs(alpha), abs(beta))
        scale = m / (2 ** (bits - 1) - 1)
        return QuantParams(scale=scale, zero_point=0, bits=bits, signed=True,
                           alpha=-m, beta=m)

    scale = (beta - alpha) / (2**bits - 1)
    zero_point = math.floor(alpha / scale)
    return QuantParams(scale=scale, zero_point=zero_point, bits=bits,
                       signed=False, alpha=alpha, beta=beta)


def quantize(r, qp: QuantParams):
    """Map real values to integer codes; works on scalars and ndarrays."""
    if np.isscalar(r):
        q = math.floor(r / qp.scale) - qp.zero_point
        return min(max(q, qp.range_lo), qp.range_hi)
    q = np.floor(np.asarray(r, dtype=np.float64) / qp.scale).astype(np.int64)
    return np.clip(q - qp.zero_point, qp.range_lo, qp.range_hi)


def dequantize(q, qp: QuantParams):
    """Map integer codes back to reals: r~ = S * (q + Z)."""
    if np.isscalar(q):
        return qp.scale * (q + qp.zero_point)
    return qp.scale * (np.asarray(q, dtype=np.int64) + qp.zero_point)


def to_fixed_point(m: float) -> FixedPointScale:
    """Represent a non-negative real scale as mantissa * 2**-shift.

    The shift is the largest value in [0, MAX_SHIFT] keeping the rounded
    mantissa below 2**31, which maximizes precision for a given scale.
    """
    if m < 0:
        raise ValueError(f"scale must be non-negative, got {m}")
    if not math.isfinite(m) or m >= 2**31:
        raise FixedPointOverflowError(
            f"scale {m} cannot be represented with a 32-bit mantissa")
    if m == 0.0:
        return FixedPointScale(0, 0)
    shift = MAX_SHIFT
    while shift > 0 and math.floor(m * 2.0**shift + 0.5) >= 2**31:
        shift -= 1
    mantissa = math.floor(m * 2.0**shift + 0.5)
    if mantissa >= 2**31:
        raise FixedPointOverflowError(
            f"scale {m} cannot be represented with a 32-bit mantissa")
    return FixedPointScale(mantissa, shift)


def fxp_mul(x: int, m: FixedPointScale) -> int:
    """Rescale a 32-bit integer by m, rounding half away from zero.

    The product is exact in 64 bits; the result saturates to int32.
    """
    p = int(x) * m.mantissa
    if m.shift > 0:
        half = 1 << (m.shift - 1)
        if p >= 0:
            p = (p + half) >> m.shift
        else:
            p = -((-p + half) >> m.shift)
    return min(max(p, INT32_MIN), INT32_MAX)
