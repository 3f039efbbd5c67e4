"""Post-training calibration.

Runs the float model over a calibration subset, records running min/max
at all 18 sites (17 block outputs plus the input), and turns those
extrema into per-site quantization parameters at the bit-widths chosen
by a genome. Observation merging is min/max and therefore associative;
the default driver is sequential.
"""

from __future__ import annotations

import json
import math

import numpy as np

from gruq.blocks import (BLOCK_NAMES, INPUT_SITE, SIGMOID_BLOCKS, SITE_NAMES,
                         TANH_BLOCKS)
from gruq.fxp import QuantParams, compute_qparams
from gruq.qops import ConfigurationError
from gruq.refnet import GRUWeights, gru_step_float

INPUT_BITS = 8


class CalibrationStats:
    """Per-site running extrema."""

    def __init__(self):
        self.minmax: dict[str, tuple[float, float]] = {}
        self.sample_count = 0

    def update(self, site: str, values):
        if site not in SITE_NAMES:
            raise ConfigurationError(f"unknown site {site!r}")
        lo, hi = float(np.min(values)), float(np.max(values))
        if site in self.minmax:
            old_lo, old_hi = self.minmax[site]
            self.minmax[site] = (min(old_lo, lo), max(old_hi, hi))
        else:
            self.minmax[site] = (lo, hi)

    def merge(self, other: "CalibrationStats") -> "CalibrationStats":
        out = CalibrationStats()
        out.sample_count = self.sample_count + other.sample_count
        for site in set(self.minmax) | set(other.minmax):
            pairs = [s.minmax[site] for s in (self, other) if site in s.minmax]
            out.minmax[site] = (min(p[0] for p in pairs), max(p[1] for p in pairs))
        return out

    def is_complete(self) -> bool:
        return all(site in self.minmax for site in SITE_NAMES)

    def to_json(self, path):
        doc = {"version": 1}
        for site, (lo, hi) in self.minmax.items():
            doc[site] = {"min": lo, "max": hi, "count": self.sample_count}
        with open(path, "w") as f:
            json.dump(doc, f)

    @classmethod
    def from_json(cls, path) -> "CalibrationStats":
        with open(path) as f:
            doc = json.load(f)
        if doc.get("version") != 1:
            raise ValueError(f"unsupported stats version {doc.get('version')}")
        stats = cls()
        for site, entry in doc.items():
            if site not in SITE_NAMES:
                continue
            stats.minmax[site] = (float(entry["min"]), float(entry["max"]))
            stats.sample_count = max(stats.sample_count, int(entry["count"]))
        return stats


def calibrate(w: GRUWeights, X, fraction: float = 1.0,
              seed: int = 0) -> CalibrationStats:
    """Observe per-site extrema over ceil(fraction * N) sequences.

    Subset selection is a seeded shuffle followed by a contiguous slice,
    so calibration is deterministic given (weights, data, fraction, seed).
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 2:
        X = X[None]
    if len(X) == 0:
        raise ValueError("empty calibration data")
    if not (0 < fraction <= 1):
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")

    rng = np.random.default_rng(seed)
    order = rng.permutation(len(X))
    subset = X[order[:math.ceil(fraction * len(X))]]

    stats = CalibrationStats()
    h = np.zeros((len(subset), w.dims.hidden_size))
    for t in range(subset.shape[1]):
        x_t = subset[:, t]
        stats.update(INPUT_SITE, x_t)
        capture: dict = {}
        h = gru_step_float(x_t, h, w, capture=capture)
        for site in BLOCK_NAMES:
            stats.update(site, capture[site])
    stats.sample_count = len(subset)
    return stats


def stats_to_qparams(stats: CalibrationStats, genome_bits,
                     input_bits: int = INPUT_BITS) -> dict[str, QuantParams]:
    """Materialize per-site QuantParams at the genome's bit-widths.

    Activation sites are asymmetric unsigned from observed extrema;
    sigmoid/tanh outputs are overridden to their analytic [0,1] / [-1,1]
    codomains. Weight grids are built separately from weight extrema.
    """
    genome_bits = list(genome_bits)
    if len(genome_bits) != len(BLOCK_NAMES):
        raise ConfigurationError(
            f"expected {len(BLOCK_NAMES)} bit-widths, got {len(genome_bits)}")

    qps: dict[str, QuantParams] = {}
    for site in SITE_NAMES:
        bits = input_bits if site == INPUT_SITE else genome_bits[BLOCK_NAMES.index(site)]
        if site in SIGMOID_BLOCKS:
            qps[site] = compute_qparams(0.0, 1.0, bits, "asymmetric")
        elif site in TANH_BLOCKS:
            qps[site] = compute_qparams(-1.0, 1.0, bits, "asymmetric")
        else:
            if site not in stats.minmax:
                raise ConfigurationError(f"missing calibration stats for site {site!r}")
            lo, hi = stats.minmax[site]
            qps[site] = compute_qparams(lo, hi, bits, "asymmetric")
    return qps
