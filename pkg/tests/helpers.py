"""Shared random-instance generators for kernel oracle tests."""

import numpy as np

from gruq.fxp import compute_qparams, dequantize, quantize
from gruq.qops import make_qlinear


def random_qlinear_instance(rng, weight_bits=16, act_bits=16):
    """Random linear layer plus matched input/output grids.

    Returns (q_x, params, x_deq, w, b, in_qp, out_qp). The output grid is
    derived from the actual pre-activations so nothing is clipped.
    """
    n_in, n_out = int(rng.integers(2, 12)), int(rng.integers(1, 10))
    w = rng.normal(size=(n_out, n_in))
    b = rng.normal(size=n_out)
    alpha = float(rng.uniform(-4, 0))
    beta = alpha + float(rng.uniform(0.5, 8))
    in_qp = compute_qparams(alpha, beta, act_bits)
    x = rng.uniform(alpha, beta, size=n_in)
    q_x = quantize(x, in_qp)
    x_deq = dequantize(q_x, in_qp)

    p = make_qlinear(w, b, in_qp, out_qp=in_qp, weight_bits=weight_bits)
    y = (p.q_w * p.w_scale) @ x_deq + b
    out_qp = compute_qparams(float(y.min()) - 0.1, float(y.max()) + 0.1,
                             act_bits)
    p = make_qlinear(w, b, in_qp, out_qp, weight_bits=weight_bits)
    return q_x, p, x_deq, w, b, in_qp, out_qp


def random_elementwise_qps(rng, bits=16, span=2.0, size=16):
    """Two random operand grids and codes for qadd/qmul oracle tests."""
    def one():
        a = float(rng.uniform(-span, 0))
        b = a + float(rng.uniform(0.5, 2 * span))
        return compute_qparams(a, b, bits)

    qp1, qp2 = one(), one()
    q1 = rng.integers(qp1.range_lo, qp1.range_hi + 1, size=size)
    q2 = rng.integers(qp2.range_lo, qp2.range_hi + 1, size=size)
    return qp1, qp2, q1, q2
