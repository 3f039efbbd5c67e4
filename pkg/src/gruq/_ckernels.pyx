# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled integer kernels, bit-identical to gruq._pykernels."""

import numpy as np
cimport numpy as cnp

cnp.import_array()

cdef long long I32MIN = -(<long long>1 << 31)
cdef long long I32MAX = (<long long>1 << 31) - 1

BACKEND_NAME = "cython"


cdef inline long long _sat32(long long v) nogil:
    if v < I32MIN:
        return I32MIN
    if v > I32MAX:
        return I32MAX
    return v


cdef inline long long _fxp1(long long x, long long mant, int shift) nogil:
    # operands wider than 32 bits are pre-shifted so x * mant fits 64 bits
    cdef long long ax = x if x >= 0 else -x
    cdef long long p, half
    cdef int k = 0
    if mant == 0:
        return 0
    while (ax >> (31 + k)) > 0 and 31 + k < 63:
        k += 1
    if k > 0:
        if k > shift:
            return I32MAX if x >= 0 else I32MIN
        ax >>= k
        shift -= k
    p = ax * mant
    if shift > 0:
        half = <long long>1 << (shift - 1)
        p = (p + half) >> shift
    if x < 0:
        p = -p
    return _sat32(p)


cdef inline long long _clamp(long long v, long long lo, long long hi) nogil:
    if v < lo:
        return lo
    if v > hi:
        return hi
    return v


def fxp_mul_arr(cnp.ndarray x, long long mantissa, int shift):
    cdef cnp.ndarray[cnp.int64_t, ndim=2] xv = np.ascontiguousarray(
        np.atleast_2d(x), dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=2] out = np.empty_like(xv)
    cdef Py_ssize_t i, j
    with nogil:
        for i in range(xv.shape[0]):
            for j in range(xv.shape[1]):
                out[i, j] = _fxp1(xv[i, j], mantissa, shift)
    return out.reshape(np.asarray(x).shape)


def qlinear(cnp.ndarray[cnp.int64_t, ndim=2] q_x,
            cnp.ndarray[cnp.int64_t, ndim=2] q_w,
            cnp.ndarray[cnp.int64_t, ndim=1] q_bias,
            long long mantissa, int shift, long long z_y,
            long long lo, long long hi):
    cdef Py_ssize_t batch = q_x.shape[0]
    cdef Py_ssize_t n_in = q_x.shape[1]
    cdef Py_ssize_t n_out = q_w.shape[0]
    cdef cnp.ndarray[cnp.int64_t, ndim=2] out = np.empty((batch, n_out),
                                                         dtype=np.int64)
    cdef Py_ssize_t b, o, k
    cdef long long acc
    with nogil:
        for b in range(batch):
            for o in range(n_out):
                # 64-bit accumulator; identical to a saturating 32-bit
                # one whenever the sum fits (always at <= 8-bit weights)
                acc = q_bias[o]
                for k in range(n_in):
                    acc += q_w[o, k] * q_x[b, k]
                out[b, o] = _clamp(_fxp1(acc, mantissa, shift) + z_y, lo, hi)
    return out


def qadd(cnp.ndarray[cnp.int64_t, ndim=2] q1,
         cnp.ndarray[cnp.int64_t, ndim=2] q2,
         long long z1, long long z2,
         long long mb_mant, int mb_shift,
         long long ma_mant, int ma_shift,
         long long z_y, long long lo, long long hi):
    cdef cnp.ndarray[cnp.int64_t, ndim=2] out = np.empty_like(q1)
    cdef Py_ssize_t i, j
    cdef long long t, s
    with nogil:
        for i in range(q1.shape[0]):
            for j in range(q1.shape[1]):
                t = _fxp1(q2[i, j] - z2, mb_mant, mb_shift)
                s = _sat32(q1[i, j] - z1 + t)
                out[i, j] = _clamp(_fxp1(s, ma_mant, ma_shift) + z_y, lo, hi)
    return out


def qmul(cnp.ndarray[cnp.int64_t, ndim=2] q1,
         cnp.ndarray[cnp.int64_t, ndim=2] q2,
         long long z1, long long z2,
         long long mantissa, int shift,
         long long z_y, long long lo, long long hi):
    cdef cnp.ndarray[cnp.int64_t, ndim=2] out = np.empty_like(q1)
    cdef Py_ssize_t i, j
    cdef long long p
    with nogil:
        for i in range(q1.shape[0]):
            for j in range(q1.shape[1]):
                # the expanded product stays in 64 bits into the rescale
                p = q1[i, j] * q2[i, j] - q1[i, j] * z2 - q2[i, j] * z1 + z1 * z2
                out[i, j] = _clamp(_fxp1(p, mantissa, shift) + z_y, lo, hi)
    return out


def qcompl(cnp.ndarray[cnp.int64_t, ndim=2] q_z,
           long long c_minus, long long mantissa, int shift,
           long long z_y, long long lo, long long hi):
    cdef cnp.ndarray[cnp.int64_t, ndim=2] out = np.empty_like(q_z)
    cdef Py_ssize_t i, j
    cdef long long v
    with nogil:
        for i in range(q_z.shape[0]):
            for j in range(q_z.shape[1]):
                v = _sat32(c_minus - q_z[i, j])
                out[i, j] = _clamp(_fxp1(v, mantissa, shift) + z_y, lo, hi)
    return out


def lut_apply(cnp.ndarray[cnp.int64_t, ndim=2] q_x,
              cnp.ndarray[cnp.int64_t, ndim=1] table,
              int in_bits):
    cdef long long size = table.shape[0]
    cdef long long mult = size // ((<long long>1 << in_bits) - 1)
    cdef cnp.ndarray[cnp.int64_t, ndim=2] out = np.empty_like(q_x)
    cdef Py_ssize_t i, j
    cdef long long idx
    with nogil:
        for i in range(q_x.shape[0]):
            for j in range(q_x.shape[1]):
                idx = q_x[i, j] * mult
                if idx < 0:
                    idx = 0
                elif idx >= size:
                    idx = size - 1
                out[i, j] = table[idx]
    return out
