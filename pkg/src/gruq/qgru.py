"""Integer-only quantized GRU model: assembly, inference, size objective.

The 17 quantized blocks follow the genome order in :mod:`gruq.blocks`.
Each gene sets the output bit-width of its block; for the six linear
blocks the same gene also sets the weight bit-width. The input is
quantized at a fixed 8 bits and the classifier at fixed 8-bit weights.
A model is immutable after construction; concurrent evaluation over
disjoint sequences is safe.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from gruq.blocks import BLOCK_NAMES, BlockId, NUM_BLOCKS
from gruq.calib import INPUT_BITS, CalibrationStats, stats_to_qparams
from gruq.fxp import (INT32_MAX, INT32_MIN, FixedPointScale, QuantParams,
                      quantize)
from gruq.qops import (ActivationLUT, ConfigurationError, QAddParams,
                       QComplParams, QLinearParams, QMulParams, build_lut,
                       lut_apply, make_qadd, make_qcompl, make_qlinear,
                       make_qmul, qadd, qcompl, qlinear, qmul)
from gruq.refnet import CLASSIFIER_BITS, GRUWeights, ModelDims

__all__ = ["BlockId", "ModelDims", "QuantizedGRUModel", "quantize_model",
           "qgru_step", "qgru_classify", "classify_batch", "model_size_bits",
           "size_complement", "save_model", "load_model"]


@dataclass(frozen=True)
class QClassifierParams:
    """8-bit classifier emitting exact 32-bit logits (no requantization).

    Logits stay in the S_w * S_h accumulator grid; argmax is unaffected by
    the positive common scale.
    """

    q_w: np.ndarray
    q_bias: np.ndarray
    logit_scale: float


@dataclass(frozen=True)
class QuantizedGRUModel:
    dims: ModelDims
    genome_bits: tuple
    input_qp: QuantParams
    hidden_qp: QuantParams
    linears: dict          # block name -> QLinearParams (6 entries)
    adds: dict             # add_r, add_z, add_n, add_h -> QAddParams
    luts: dict             # sig_r, sig_z, tanh_n -> ActivationLUT
    muls: dict             # mul_r, mul_new, mul_old -> QMulParams
    compl: QComplParams
    classifier: QClassifierParams

    def quantize_input(self, x):
        return quantize(x, self.input_qp)

    def initial_hidden(self, batch: int | None = None):
        h0 = quantize(0.0, self.hidden_qp)
        if batch is None:
            return np.full(self.dims.hidden_size, h0, dtype=np.int64)
        return np.full((batch, self.dims.hidden_size), h0, dtype=np.int64)


def quantize_model(weights: GRUWeights, stats: CalibrationStats, genome_bits,
                   input_bits: int = INPUT_BITS) -> QuantizedGRUModel:
    """Build all integer parameters for one bit-width assignment.

    Activation grids come from calibration stats (sigmoid/tanh analytic);
    weight grids from weight extrema at the owning gene's width.
    """
    genome_bits = tuple(int(b) for b in genome_bits)
    if len(genome_bits) != NUM_BLOCKS:
        raise ConfigurationError(f"expected {NUM_BLOCKS} genes")
    if any(not (2 <= b <= 16) for b in genome_bits):
        raise ConfigurationError("bit-widths must lie in [2, 16]")

    qp = stats_to_qparams(stats, genome_bits, input_bits=input_bits)
    hidden_qp = qp["add_h"]

    linears = {}
    for name in BLOCK_NAMES[:6]:
        in_qp = qp["input"] if name.startswith("w_i") else hidden_qp
        bias = getattr(weights, "b" + name[1:])
        linears[name] = make_qlinear(getattr(weights, name), bias, in_qp,
                                     qp[name], genome_bits[BLOCK_NAMES.index(name)])

    adds = {
        "add_r": make_qadd(qp["w_ir"], qp["w_hr"], qp["add_r"]),
        "add_z": make_qadd(qp["w_iz"], qp["w_hz"], qp["add_z"]),
        "add_n": make_qadd(qp["w_in"], qp["mul_r"], qp["add_n"]),
        "add_h": make_qadd(qp["mul_new"], qp["mul_old"], qp["add_h"]),
    }
    luts = {
        "sig_r": build_lut("sigmoid", qp["add_r"], qp["sig_r"]),
        "sig_z": build_lut("sigmoid", qp["add_z"], qp["sig_z"]),
        "tanh_n": build_lut("tanh", qp["add_n"], qp["tanh_n"]),
    }
    muls = {
        "mul_r": make_qmul(qp["sig_r"], qp["w_hn"], qp["mul_r"]),
        "mul_new": make_qmul(qp["compl_z"], qp["tanh_n"], qp["mul_new"]),
        "mul_old": make_qmul(qp["sig_z"], hidden_qp, qp["mul_old"]),
    }
    compl = make_qcompl(qp["sig_z"], qp["compl_z"])

    from gruq.fxp import compute_qparams
    wc_max = float(np.max(np.abs(weights.w_c)))
    wc_qp = compute_qparams(-wc_max, wc_max, CLASSIFIER_BITS, "symmetric")
    q_wc = quantize(weights.w_c, wc_qp)
    s_b = wc_qp.scale * hidden_qp.scale
    q_bc = np.clip(np.floor(weights.b_c / s_b).astype(np.int64),
                   INT32_MIN, INT32_MAX)
    q_bias_c = np.clip(q_bc + hidden_qp.zero_point * q_wc.sum(axis=1),
                       INT32_MIN, INT32_MAX)
    classifier = QClassifierParams(q_w=q_wc, q_bias=q_bias_c, logit_scale=s_b)

    return QuantizedGRUModel(
        dims=weights.dims, genome_bits=genome_bits,
        input_qp=qp["input"], hidden_qp=hidden_qp,
        linears=linears, adds=adds, luts=luts, muls=muls, compl=compl,
        classifier=classifier)


def qgru_step(q_x, q_h, model: QuantizedGRUModel):
    """One integer-only GRU step; q_x/q_h may be 1-D or batched 2-D."""
    lin = model.linears
    a_ir = qlinear(q_x, lin["w_ir"])
    a_iz = qlinear(q_x, lin["w_iz"])
    a_in = qlinear(q_x, lin["w_in"])
    a_hr = qlinear(q_h, lin["w_hr"])
    a_hz = qlinear(q_h, lin["w_hz"])
    a_hn = qlinear(q_h, lin["w_hn"])

    s_r = qadd(a_ir, a_hr, model.adds["add_r"])
    s_z = qadd(a_iz, a_hz, model.adds["add_z"])
    r = lut_apply(s_r, model.luts["sig_r"])
    z = lut_apply(s_z, model.luts["sig_z"])

    p_r = qmul(r, a_hn, model.muls["mul_r"])
    s_n = qadd(a_in, p_r, model.adds["add_n"])
    n = lut_apply(s_n, model.luts["tanh_n"])

    cz = qcompl(z, model.compl)
    p_new = qmul(cz, n, model.muls["mul_new"])
    p_old = qmul(z, q_h, model.muls["mul_old"])
    return qadd(p_new, p_old, model.adds["add_h"])


def _classifier_logits(q_h, model: QuantizedGRUModel):
    q_h = np.atleast_2d(np.asarray(q_h, dtype=np.int64))
    acc = q_h @ model.classifier.q_w.T + model.classifier.q_bias
    return np.clip(acc, INT32_MIN, INT32_MAX)


def qgru_classify(sequence, model: QuantizedGRUModel):
    """Classify one quantized sequence (T, F); ties break to the lowest class."""
    sequence = np.asarray(sequence, dtype=np.int64)
    if sequence.ndim != 2 or sequence.shape[0] == 0:
        raise ConfigurationError("sequence must be a non-empty (T, F) matrix")
    q_h = model.initial_hidden(batch=1)
    for t in range(sequence.shape[0]):
        q_h = qgru_step(sequence[t][None, :], q_h, model)
    logits = _classifier_logits(q_h, model)[0]
    return logits, int(np.argmax(logits))


def classify_batch(sequences, model: QuantizedGRUModel):
    """Predicted labels for quantized sequences (B, T, F), all steps batched."""
    sequences = np.asarray(sequences, dtype=np.int64)
    q_h = model.initial_hidden(batch=sequences.shape[0])
    for t in range(sequences.shape[1]):
        q_h = qgru_step(sequences[:, t], q_h, model)
    return np.argmax(_classifier_logits(q_h, model), axis=1)


def quantized_accuracy(model: QuantizedGRUModel, X_float, y):
    preds = classify_batch(model.quantize_input(np.asarray(X_float)), model)
    return float(np.mean(preds == np.asarray(y)))


# ---------------------------------------------------------------------------
# model size objective

BASELINE_BITS = 16
BIAS_BITS = 32


def model_size_bits(genome_bits, dims: ModelDims, baseline: bool = False) -> int:
    """Total bits of the 7 linear layers (6 GRU + classifier), biases at 32."""
    f, h, c = dims.input_features, dims.hidden_size, dims.num_classes
    layers = [(h * f, genome_bits[i]) for i in range(3)]
    layers += [(h * h, genome_bits[i]) for i in range(3, 6)]
    layers.append((c * h, CLASSIFIER_BITS))
    bias_elems = 6 * h + c

    total = 0
    for numel, bits in layers:
        total += numel * (BASELINE_BITS if baseline else bits)
    total += bias_elems * BIAS_BITS
    return total


def size_complement(genome_bits, dims: ModelDims) -> float:
    """1 - quantized bits / FP16-reference bits; higher means smaller."""
    return 1.0 - model_size_bits(genome_bits, dims) / model_size_bits(
        genome_bits, dims, baseline=True)


# ---------------------------------------------------------------------------
# serialization


def _qp_to_json(qp: QuantParams):
    return {"scale": qp.scale, "zero_point": qp.zero_point, "bits": qp.bits,
            "signed": qp.signed, "alpha": qp.alpha, "beta": qp.beta}


def _qp_from_json(d):
    return QuantParams(scale=d["scale"], zero_point=d["zero_point"],
                       bits=d["bits"], signed=d["signed"],
                       alpha=d["alpha"], beta=d["beta"])


def _fxp_to_json(m: FixedPointScale):
    return {"mantissa": m.mantissa, "shift": m.shift}


def _fxp_from_json(d):
    return FixedPointScale(mantissa=d["mantissa"], shift=d["shift"])


def model_to_json(model: QuantizedGRUModel) -> dict:
    doc = {
        "version": 1,
        "dims": {"input_features": model.dims.input_features,
                 "hidden_size": model.dims.hidden_size,
                 "num_classes": model.dims.num_classes},
        "genome": list(model.genome_bits),
        "input_qp": _qp_to_json(model.input_qp),
        "hidden_qp": _qp_to_json(model.hidden_qp),
        "blocks": {},
        "classifier": {"q_w": model.classifier.q_w.tolist(),
                       "q_bias": model.classifier.q_bias.tolist(),
                       "logit_scale": model.classifier.logit_scale},
    }
    for name, p in model.linears.items():
        doc["blocks"][name] = {
            "type": "linear", "q_w": p.q_w.tolist(), "q_bias": p.q_bias.tolist(),
            "m": _fxp_to_json(p.m), "z_y": p.z_y, "w_scale": p.w_scale,
            "out_qp": _qp_to_json(p.out_qp), "in_qp": _qp_to_json(p.in_qp)}
    for name, p in model.adds.items():
        doc["blocks"][name] = {
            "type": "add", "m_alpha": _fxp_to_json(p.m_alpha),
            "m_beta": _fxp_to_json(p.m_beta), "z1": p.z1, "z2": p.z2,
            "z_y": p.z_y, "out_qp": _qp_to_json(p.out_qp)}
    for name, p in model.muls.items():
        doc["blocks"][name] = {
            "type": "mul", "m_gamma": _fxp_to_json(p.m_gamma),
            "z1": p.z1, "z2": p.z2, "z_y": p.z_y,
            "out_qp": _qp_to_json(p.out_qp)}
    for name, p in model.luts.items():
        doc["blocks"][name] = {
            "type": "lut", "kind": p.kind, "table": p.table.tolist(),
            "in_bits": p.in_bits, "out_qp": _qp_to_json(p.out_qp)}
    p = model.compl
    doc["blocks"]["compl_z"] = {
        "type": "compl", "c_minus": p.c_minus, "m": _fxp_to_json(p.m),
        "z_y": p.z_y, "out_qp": _qp_to_json(p.out_qp)}
    return doc


def model_from_json(doc: dict) -> QuantizedGRUModel:
    if doc.get("version") != 1:
        raise ValueError(f"unsupported quantized model version {doc.get('version')}")
    dims = ModelDims(**doc["dims"])
    blocks = doc["blocks"]

    linears = {}
    for name in BLOCK_NAMES[:6]:
        b = blocks[name]
        linears[name] = QLinearParams(
            q_w=np.asarray(b["q_w"], dtype=np.int64),
            q_bias=np.asarray(b["q_bias"], dtype=np.int64),
            m=_fxp_from_json(b["m"]), z_y=b["z_y"],
            out_qp=_qp_from_json(b["out_qp"]), w_scale=b["w_scale"],
            in_qp=_qp_from_json(b["in_qp"]))
    adds = {}
    for name in ("add_r", "add_z", "add_n", "add_h"):
        b = blocks[name]
        adds[name] = QAddParams(
            m_alpha=_fxp_from_json(b["m_alpha"]), m_beta=_fxp_from_json(b["m_beta"]),
            z1=b["z1"], z2=b["z2"], z_y=b["z_y"], out_qp=_qp_from_json(b["out_qp"]))
    muls = {}
    for name in ("mul_r", "mul_new", "mul_old"):
        b = blocks[name]
        muls[name] = QMulParams(
            m_gamma=_fxp_from_json(b["m_gamma"]), z1=b["z1"], z2=b["z2"],
            z_y=b["z_y"], out_qp=_qp_from_json(b["out_qp"]))
    luts = {}
    for name in ("sig_r", "sig_z", "tanh_n"):
        b = blocks[name]
        luts[name] = ActivationLUT(
            table=np.asarray(b["table"], dtype=np.int64), in_bits=b["in_bits"],
            out_qp=_qp_from_json(b["out_qp"]), kind=b["kind"])
    b = blocks["compl_z"]
    compl = QComplParams(c_minus=b["c_minus"], m=_fxp_from_json(b["m"]),
                         z_y=b["z_y"], out_qp=_qp_from_json(b["out_qp"]))
    c = doc["classifier"]
    classifier = QClassifierParams(
        q_w=np.asarray(c["q_w"], dtype=np.int64),
        q_bias=np.asarray(c["q_bias"], dtype=np.int64),
        logit_scale=c["logit_scale"])

    return QuantizedGRUModel(
        dims=dims, genome_bits=tuple(doc["genome"]),
        input_qp=_qp_from_json(doc["input_qp"]),
        hidden_qp=_qp_from_json(doc["hidden_qp"]),
        linears=linears, adds=adds, luts=luts, muls=muls, compl=compl,
        classifier=classifier)


def save_model(model: QuantizedGRUModel, path, extra: dict | None = None):
    doc = model_to_json(model)
    if extra:
        doc.update(extra)
    with open(path, "w") as f:
        json.dump(doc, f)


def load_model(path) -> QuantizedGRUModel:
    with open(path) as f:
        return model_from_json(json.load(f))
