"""Integer-only quantized tensor operators.

Four operator families cover every block of the quantized GRU: linear
layers, elementwise adds, elementwise products, and LUT-based
activations (plus the dedicated update-gate complement).

Parameter objects store the integer offsets actually applied by the
kernels. Because dequantization here is r~ = S * (q + Z), the stored
``z1``/``z2``/``z_y`` fields are the *negated* site zero-points, so the
kernel formulas are plain subtract-input / add-output offsets.
Parameter objects are immutable after construction; the operators are
pure and safe for concurrent inference on shared parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from gruq import kernels
from gruq.fxp import (INT32_MAX, INT32_MIN, FixedPointScale, QuantParams,
                      dequantize, quantize, to_fixed_point)


class ConfigurationError(ValueError):
    """Mismatched shapes or missing quantization configuration."""


@dataclass(frozen=True)
class QLinearParams:
    """Quantized linear layer: q_y = clamp(M * (q_w q_x + q_bias) + z_y)."""

    q_w: np.ndarray          # (out, in), int64, symmetric weight codes
    q_bias: np.ndarray       # (out,), int64, folds bias and input offset
    m: FixedPointScale       # S_w * S_x / S_y
    z_y: int                 # additive output offset (-Z_y)
    out_qp: QuantParams
    w_scale: float           # S_w, kept for dequantized-weight access
    in_qp: QuantParams = field(repr=False, default=None)

    def __post_init__(self):
        if self.q_w.ndim != 2 or self.q_bias.shape != (self.q_w.shape[0],):
            raise ConfigurationError("weight/bias shape mismatch")


@dataclass(frozen=True)
class QAddParams:
    m_alpha: FixedPointScale  # S_1 / S_y
    m_beta: FixedPointScale   # S_2 / S_1
    z1: int
    z2: int
    z_y: int
    out_qp: QuantParams


@dataclass(frozen=True)
class QMulParams:
    m_gamma: FixedPointScale  # S_1 * S_2 / S_y
    z1: int
    z2: int
    z_y: int
    out_qp: QuantParams


@dataclass(frozen=True)
class QComplParams:
    """Integer map of r -> 1 - r on quantized codes."""

    c_minus: int              # round(1 / S_z) + z1, precomputed constant
    m: FixedPointScale        # S_z / S_y
    z_y: int
    out_qp: QuantParams


@dataclass(frozen=True)
class ActivationLUT:
    table: np.ndarray         # (2**in_bits,), int64
    in_bits: int
    out_qp: QuantParams
    kind: str                 # "sigmoid" | "tanh"

    def __post_init__(self):
        if self.kind not in ("sigmoid", "tanh"):
            raise ConfigurationError(f"unknown activation kind {self.kind!r}")
        if np.any(np.diff(self.table) < 0):
            raise ConfigurationError("activation table must be non-decreasing")


def make_qlinear(weight, bias, in_qp: QuantParams, out_qp: QuantParams,
                 weight_bits: int) -> QLinearParams:
    """Quantize a float linear layer against its input/output grids.

    Weights are symmetric at ``weight_bits``; the bias is quantized at the
    shared scale S_w * S_x into a 32-bit code and folded together with the
    input zero-point correction.
    """
    from gruq.fxp import compute_qparams

    weight = np.asarray(weight, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    w_max = float(np.max(np.abs(weight))) if weight.size else 0.0
    w_qp = compute_qparams(-w_max, w_max, weight_bits, "symmetric")
    q_w = quantize(weight, w_qp)

    # folded bias kept in 64 bits, matching the 64-bit accumulator; it
    # fits 32 bits whenever weights are at most 8-bit
    s_b = w_qp.scale * in_qp.scale
    q_b = np.floor(bias / s_b).astype(np.int64)
    # acc must represent (q_x + Z_x) against the stored raw q_x codes
    q_bias = q_b + in_qp.zero_point * q_w.sum(axis=1)

    m = to_fixed_point(w_qp.scale * in_qp.scale / out_qp.scale)
    return QLinearParams(q_w=q_w, q_bias=q_bias, m=m, z_y=-out_qp.zero_point,
                         out_qp=out_qp, w_scale=w_qp.scale, in_qp=in_qp)


def make_qadd(qp1: QuantParams, qp2: QuantParams,
              out_qp: QuantParams) -> QAddParams:
    return QAddParams(
        m_alpha=to_fixed_point(qp1.scale / out_qp.scale),
        m_beta=to_fixed_point(qp2.scale / qp1.scale),
        z1=-qp1.zero_point, z2=-qp2.zero_point, z_y=-out_qp.zero_point,
        out_qp=out_qp)


def make_qmul(qp1: QuantParams, qp2: QuantParams,
              out_qp: QuantParams) -> QMulParams:
    return QMulParams(
        m_gamma=to_fixed_point(qp1.scale * qp2.scale / out_qp.scale),
        z1=-qp1.zero_point, z2=-qp2.zero_point, z_y=-out_qp.zero_point,
        out_qp=out_qp)


def make_qcompl(in_qp: QuantParams, out_qp: QuantParams) -> QComplParams:
    c = int(np.floor(1.0 / in_qp.scale + 0.5))
    return QComplParams(
        c_minus=c - in_qp.zero_point,
        m=to_fixed_point(in_qp.scale / out_qp.scale),
        z_y=-out_qp.zero_point, out_qp=out_qp)


def build_lut(kind: str, in_qp: QuantParams, out_qp: QuantParams) -> ActivationLUT:
    """Tabulate a sigmoid/tanh over every input code of the producing site."""
    if kind == "sigmoid":
        fn = lambda x: 1.0 / (1.0 + np.exp(-x))
    elif kind == "tanh":
        fn = np.tanh
    else:
        raise ConfigurationError(f"unknown activation kind {kind!r}")
    codes = np.arange(2**in_qp.bits, dtype=np.int64)
    table = quantize(fn(dequantize(codes, in_qp)), out_qp)
    return ActivationLUT(table=table, in_bits=in_qp.bits, out_qp=out_qp, kind=kind)


def _as2d(q):
    q = np.ascontiguousarray(q, dtype=np.int64)
    if q.ndim == 1:
        return q[None, :], True
    if q.ndim == 2:
        return q, False
    raise ConfigurationError(f"expected 1-D or 2-D operand, got shape {q.shape}")


def qlinear(q_x, p: QLinearParams):
    x2, squeeze = _as2d(q_x)
    if x2.shape[1] != p.q_w.shape[1]:
        raise ConfigurationError(
            f"input width {x2.shape[1]} != weight width {p.q_w.shape[1]}")
    out = kernels.qlinear(x2, np.ascontiguousarray(p.q_w),
                          np.ascontiguousarray(p.q_bias),
                          p.m.mantissa, p.m.shift, p.z_y,
                          p.out_qp.range_lo, p.out_qp.range_hi)
    return out[0] if squeeze else out


def _check_pair(q1, q2):
    a, s1 = _as2d(q1)
    b, s2 = _as2d(q2)
    if a.shape != b.shape:
        raise ConfigurationError(f"operand shapes differ: {a.shape} vs {b.shape}")
    return a, b, s1 and s2


def qadd(q1, q2, p: QAddParams):
    a, b, squeeze = _check_pair(q1, q2)
    out = kernels.qadd(a, b, p.z1, p.z2,
                       p.m_beta.mantissa, p.m_beta.shift,
                       p.m_alpha.mantissa, p.m_alpha.shift,
                       p.z_y, p.out_qp.range_lo, p.out_qp.range_hi)
    return out[0] if squeeze else out


def qmul(q1, q2, p: QMulParams):
    a, b, squeeze = _check_pair(q1, q2)
    out = kernels.qmul(a, b, p.z1, p.z2,
                       p.m_gamma.mantissa, p.m_gamma.shift,
                       p.z_y, p.out_qp.range_lo, p.out_qp.range_hi)
    return out[0] if squeeze else out


def qcompl(q_z, p: QComplParams):
    a, squeeze = _as2d(q_z)
    out = kernels.qcompl(a, p.c_minus, p.m.mantissa, p.m.shift,
                         p.z_y, p.out_qp.range_lo, p.out_qp.range_hi)
    return out[0] if squeeze else out


def lut_apply(q_x, lut: ActivationLUT):
    a, squeeze = _as2d(q_x)
    out = kernels.lut_apply(a, np.ascontiguousarray(lut.table), lut.in_bits)
    return out[0] if squeeze else out
