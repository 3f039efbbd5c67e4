"""Pure-numpy integer kernels.

Reference implementation of the hot inner loops; bit-identical to the
compiled backend in ``gruq._ckernels``. All arrays are int64 and all
intermediate products and accumulators stay inside 64 bits on their way
into the fixed-point rescale.

Shapes: operand arrays are 2-D with the feature axis last; the wrapper
layer in :mod:`gruq.qops` normalizes 1-D inputs.
"""

from __future__ import annotations

import numpy as np

INT32_MIN = -(2**31)
INT32_MAX = 2**31 - 1

BACKEND_NAME = "python"


def _sat32(a):
    return np.clip(a, INT32_MIN, INT32_MAX)


def fxp_mul_arr(x, mantissa: int, shift: int):
    """Elementwise fixed-point rescale, rounding half away from zero.

    Operands wider than 32 bits (possible in the expanded product path)
    are pre-shifted right so the mantissa product stays inside 64 bits;
    the lost low bits are far below the output rounding step.
    """
    x = np.asarray(x, dtype=np.int64)
    if mantissa == 0:
        return np.zeros_like(x)
    ax = np.abs(x)
    k = np.zeros_like(ax)
    big = (ax >> (31 + k)) > 0
    while big.any():
        k[big] += 1
        big = (ax >> np.minimum(31 + k, 63)) > 0
    over = k > shift          # result magnitude provably exceeds int32
    sh = np.maximum(shift - k, 0)
    half = np.where(sh > 0, np.left_shift(np.int64(1), np.maximum(sh - 1, 0)),
                    np.int64(0))
    p = ((ax >> k) * np.int64(mantissa) + half) >> sh
    p = np.where(x < 0, -p, p)
    p = _sat32(p)
    return np.where(over, np.where(x < 0, np.int64(INT32_MIN),
                                   np.int64(INT32_MAX)), p)


def qlinear(q_x, q_w, q_bias, mantissa: int, shift: int, z_y: int,
            lo: int, hi: int):
    """Integer linear layer: requantized (q_x @ q_w.T + q_bias).

    The accumulator is kept in 64 bits all the way into the rescale;
    whenever it fits 32 bits (always true at <= 8-bit weights) this is
    bit-identical to a 32-bit saturating accumulator.
    """
    acc = q_x @ q_w.T + q_bias
    return np.clip(fxp_mul_arr(acc, mantissa, shift) + z_y, lo, hi)


def qadd(q1, q2, z1: int, z2: int, mb_mant: int, mb_shift: int,
         ma_mant: int, ma_shift: int, z_y: int, lo: int, hi: int):
    """Integer elementwise add with grid matching of the second operand."""
    t = fxp_mul_arr(q2 - np.int64(z2), mb_mant, mb_shift)
    s = _sat32(q1 - np.int64(z1) + t)
    return np.clip(fxp_mul_arr(s, ma_mant, ma_shift) + z_y, lo, hi)


def qmul(q1, q2, z1: int, z2: int, mantissa: int, shift: int, z_y: int,
         lo: int, hi: int):
    """Integer elementwise product with a single combined scale.

    The cross-term expansion stays in 64 bits all the way into the
    rescale; only the rescaled result saturates.
    """
    p = q1 * q2 - q1 * np.int64(z2) - q2 * np.int64(z1) + np.int64(z1) * np.int64(z2)
    return np.clip(fxp_mul_arr(p, mantissa, shift) + z_y, lo, hi)


def qcompl(q_z, c_minus: int, mantissa: int, shift: int, z_y: int,
           lo: int, hi: int):
    """Integer map of r -> 1 - r, used for the update-gate complement."""
    v = _sat32(np.int64(c_minus) - q_z)
    return np.clip(fxp_mul_arr(v, mantissa, shift) + z_y, lo, hi)


def lut_apply(q_x, table, in_bits: int):
    """Table lookup with the index multiplier floor(L / (2**in_bits - 1))."""
    size = table.shape[0]
    mult = size // ((1 << in_bits) - 1)
    idx = np.clip(q_x * np.int64(mult), 0, size - 1)
    return table[idx]
