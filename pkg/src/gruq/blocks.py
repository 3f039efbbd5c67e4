"""Canonical naming of the 17 quantized GRU blocks and their genome order."""

from __future__ import annotations

from enum import IntEnum


class BlockId(IntEnum):
    """Genome index of each quantized block."""

    W_IR = 0
    W_IZ = 1
    W_IN = 2
    W_HR = 3
    W_HZ = 4
    W_HN = 5
    ADD_R = 6
    ADD_Z = 7
    ADD_N = 8
    SIG_R = 9
    SIG_Z = 10
    TANH_N = 11
    MUL_R = 12
    COMPL_Z = 13
    MUL_NEW = 14
    MUL_OLD = 15
    ADD_H = 16


BLOCK_NAMES = [
    "w_ir", "w_iz", "w_in", "w_hr", "w_hz", "w_hn",
    "add_r", "add_z", "add_n",
    "sig_r", "sig_z", "tanh_n",
    "mul_r", "compl_z", "mul_new", "mul_old", "add_h",
]

NUM_BLOCKS = len(BLOCK_NAMES)

LINEAR_BLOCKS = BLOCK_NAMES[:6]
SIGMOID_BLOCKS = ("sig_r", "sig_z")
TANH_BLOCKS = ("tanh_n",)

INPUT_SITE = "input"
SITE_NAMES = [INPUT_SITE] + BLOCK_NAMES
