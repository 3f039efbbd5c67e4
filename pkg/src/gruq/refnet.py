"""Float reference GRU with hand-derived BPTT, plus QAT fine-tuning.

A single GRU layer followed by a linear classifier on the final hidden
state. Gradients are derived by hand for this fixed architecture (no
autograd); training is single-threaded and deterministic under a fixed
seed. QAT inserts fake-quantization at the 17 block outputs and on all
weights, backpropagating through the clipped straight-through estimator.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from gruq.blocks import BLOCK_NAMES, LINEAR_BLOCKS, SIGMOID_BLOCKS, TANH_BLOCKS
from gruq.fxp import QuantParams, compute_qparams, dequantize, quantize

WEIGHT_FIELDS = ("w_ir", "w_iz", "w_in", "w_hr", "w_hz", "w_hn",
                 "b_ir", "b_iz", "b_in", "b_hr", "b_hz", "b_hn",
                 "w_c", "b_c")

# genome block owning each linear layer's weight matrix
_WEIGHT_BLOCK = {"w_ir": 0, "w_iz": 1, "w_in": 2, "w_hr": 3, "w_hz": 4, "w_hn": 5}

CLASSIFIER_BITS = 8


@dataclass(frozen=True)
class ModelDims:
    input_features: int
    hidden_size: int
    num_classes: int

    def __post_init__(self):
        if min(self.input_features, self.hidden_size, self.num_classes) < 1:
            raise ValueError("all dimensions must be >= 1")


@dataclass
class GRUWeights:
    """All float parameters of the reference model."""

    w_ir: np.ndarray
    w_iz: np.ndarray
    w_in: np.ndarray
    w_hr: np.ndarray
    w_hz: np.ndarray
    w_hn: np.ndarray
    b_ir: np.ndarray
    b_iz: np.ndarray
    b_in: np.ndarray
    b_hr: np.ndarray
    b_hz: np.ndarray
    b_hn: np.ndarray
    w_c: np.ndarray
    b_c: np.ndarray

    @property
    def dims(self) -> ModelDims:
        return ModelDims(input_features=self.w_ir.shape[1],
                         hidden_size=self.w_ir.shape[0],
                         num_classes=self.w_c.shape[0])

    def items(self):
        return [(name, getattr(self, name)) for name in WEIGHT_FIELDS]

    def copy(self) -> "GRUWeights":
        return GRUWeights(**{k: v.copy() for k, v in self.items()})


@dataclass
class TrainConfig:
    batch_size: int = 256
    epochs: int = 50
    learning_rate: float = 1e-3
    validation_fraction: float = 0.05
    validate_every: int = 5
    train_fraction: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 1.0
    seed: int = 42

    def __post_init__(self):
        if not (0 < self.validation_fraction <= 1) or not (0 < self.train_fraction <= 1):
            raise ValueError("fractions must be in (0, 1]")
        if min(self.batch_size, self.validate_every) < 1 or self.epochs < 0:
            raise ValueError("batch_size/validate_every must be positive")


def init_weights(dims: ModelDims, seed: int = 42) -> GRUWeights:
    """Uniform init in +-1/sqrt(H) for every matrix and bias."""
    rng = np.random.default_rng(seed)
    bound = 1.0 / math.sqrt(dims.hidden_size)
    h, f, c = dims.hidden_size, dims.input_features, dims.num_classes

    def u(*shape):
        return rng.uniform(-bound, bound, size=shape)

    return GRUWeights(
        w_ir=u(h, f), w_iz=u(h, f), w_in=u(h, f),
        w_hr=u(h, h), w_hz=u(h, h), w_hn=u(h, h),
        b_ir=u(h), b_iz=u(h), b_in=u(h), b_hr=u(h), b_hz=u(h), b_hn=u(h),
        w_c=u(c, h), b_c=u(c))


def save_weights(w: GRUWeights, path):
    dims = w.dims
    doc = {"version": 1,
           "dims": {"input_features": dims.input_features,
                    "hidden_size": dims.hidden_size,
                    "num_classes": dims.num_classes}}
    for name, arr in w.items():
        doc[name] = arr.tolist()
    with open(path, "w") as f:
        json.dump(doc, f)


def load_weights(path) -> GRUWeights:
    with open(path) as f:
        doc = json.load(f)
    if doc.get("version") != 1:
        raise ValueError(f"unsupported float model version {doc.get('version')}")
    return GRUWeights(**{name: np.asarray(doc[name], dtype=np.float64)
                         for name in WEIGHT_FIELDS})


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def gru_step_float(x, h, w: GRUWeights, capture: dict | None = None):
    """One float GRU step; optionally records per-block values in `capture`."""
    a_ir = x @ w.w_ir.T + w.b_ir
    a_iz = x @ w.w_iz.T + w.b_iz
    a_in = x @ w.w_in.T + w.b_in
    a_hr = h @ w.w_hr.T + w.b_hr
    a_hz = h @ w.w_hz.T + w.b_hz
    a_hn = h @ w.w_hn.T + w.b_hn
    r = _sigmoid(a_ir + a_hr)
    z = _sigmoid(a_iz + a_hz)
    p_r = r * a_hn
    n = np.tanh(a_in + p_r)
    cz = 1.0 - z
    p_new = cz * n
    p_old = z * h
    h_new = p_new + p_old
    if capture is not None:
        capture.update(w_ir=a_ir, w_iz=a_iz, w_in=a_in,
                       w_hr=a_hr, w_hz=a_hz, w_hn=a_hn,
                       add_r=a_ir + a_hr, add_z=a_iz + a_hz, add_n=a_in + p_r,
                       sig_r=r, sig_z=z, tanh_n=n,
                       mul_r=p_r, compl_z=cz, mul_new=p_new, mul_old=p_old,
                       add_h=h_new)
    return h_new


def forward_hidden(w: GRUWeights, X):
    """Final hidden state for a batch of sequences X (B, T, F)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 2:
        X = X[None]
    h = np.zeros((X.shape[0], w.dims.hidden_size))
    for t in range(X.shape[1]):
        h = gru_step_float(X[:, t], h, w)
    return h


def logits_float(w: GRUWeights, X):
    return forward_hidden(w, X) @ w.w_c.T + w.b_c


def predict_float(w: GRUWeights, X):
    return np.argmax(logits_float(w, X), axis=1)


def accuracy_float(w: GRUWeights, X, y):
    return float(np.mean(predict_float(w, X) == np.asarray(y)))


# ---------------------------------------------------------------------------
# fake quantization / STE


def fake_quant(r, qp: QuantParams):
    """quantize-then-dequantize; identity on grid points inside the range."""
    return dequantize(quantize(r, qp), qp)


def fake_quant_ste(r, qp: QuantParams):
    """Forward fake-quant plus the clipped-STE gradient mask."""
    r = np.asarray(r, dtype=np.float64)
    mask = ((r >= qp.alpha) & (r <= qp.beta)).astype(np.float64)
    return fake_quant(r, qp), mask


class QatQuantizer:
    """Tracks activation ranges (EMA of batch extrema) and quantizes weights.

    Sigmoid/tanh output sites use their analytic [0,1] / [-1,1] ranges; the
    other block outputs track an exponential moving average of per-batch
    min/max with the given momentum. Weight ranges are per-step extrema.
    """

    def __init__(self, genome_bits, momentum: float = 0.9):
        genome_bits = list(genome_bits)
        if len(genome_bits) != len(BLOCK_NAMES):
            raise ValueError(f"expected {len(BLOCK_NAMES)} bit-widths")
        self.bits = dict(zip(BLOCK_NAMES, genome_bits))
        self.momentum = momentum
        self.ranges: dict[str, tuple[float, float]] = {}
        self.training = True

    def _site_qp(self, site, arr) -> QuantParams:
        if site in SIGMOID_BLOCKS:
            lo, hi = 0.0, 1.0
        elif site in TANH_BLOCKS:
            lo, hi = -1.0, 1.0
        else:
            b_lo, b_hi = float(np.min(arr)), float(np.max(arr))
            if self.training:
                if site not in self.ranges:
                    self.ranges[site] = (b_lo, b_hi)
                else:
                    m = self.momentum
                    old_lo, old_hi = self.ranges[site]
                    self.ranges[site] = (m * old_lo + (1 - m) * b_lo,
                                         m * old_hi + (1 - m) * b_hi)
            lo, hi = self.ranges.get(site, (b_lo, b_hi))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return compute_qparams(lo, hi, self.bits[site], "asymmetric")

    def fq_site(self, site, arr):
        return fake_quant_ste(arr, self._site_qp(site, arr))

    def fq_weight(self, arr, bits):
        w_max = float(np.max(np.abs(arr)))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            qp = compute_qparams(-w_max, w_max, bits, "symmetric")
        return fake_quant(arr, qp)

    def quantized_weights(self, w: GRUWeights) -> GRUWeights:
        out = w.copy()
        for name, block in _WEIGHT_BLOCK.items():
            setattr(out, name, self.fq_weight(getattr(w, name), self.bits[BLOCK_NAMES[block]]))
        out.w_c = self.fq_weight(w.w_c, CLASSIFIER_BITS)
        return out


# ---------------------------------------------------------------------------
# BPTT


def _qat_step_forward(x, h, wq: GRUWeights, quantizer: QatQuantizer | None):
    """One step with optional fake-quant at every block output.

    Returns (h_new, cache); the cache holds the values and STE masks the
    backward pass needs.
    """
    c = {"x": x, "h_prev": h}

    def fq(site, arr):
        if quantizer is None:
            return arr, None
        return quantizer.fq_site(site, arr)

    a_ir, c["m_w_ir"] = fq("w_ir", x @ wq.w_ir.T + wq.b_ir)
    a_iz, c["m_w_iz"] = fq("w_iz", x @ wq.w_iz.T + wq.b_iz)
    a_in, c["m_w_in"] = fq("w_in", x @ wq.w_in.T + wq.b_in)
    a_hr, c["m_w_hr"] = fq("w_hr", h @ wq.w_hr.T + wq.b_hr)
    a_hz, c["m_w_hz"] = fq("w_hz", h @ wq.w_hz.T + wq.b_hz)
    a_hn, c["m_w_hn"] = fq("w_hn", h @ wq.w_hn.T + wq.b_hn)

    s_r, c["m_add_r"] = fq("add_r", a_ir + a_hr)
    s_z, c["m_add_z"] = fq("add_z", a_iz + a_hz)
    r_raw = _sigmoid(s_r)
    z_raw = _sigmoid(s_z)
    r, c["m_sig_r"] = fq("sig_r", r_raw)
    z, c["m_sig_z"] = fq("sig_z", z_raw)

    p_r, c["m_mul_r"] = fq("mul_r", r * a_hn)
    s_n, c["m_add_n"] = fq("add_n", a_in + p_r)
    n_raw = np.tanh(s_n)
    n, c["m_tanh_n"] = fq("tanh_n", n_raw)

    cz, c["m_compl_z"] = fq("compl_z", 1.0 - z)
    p_new, c["m_mul_new"] = fq("mul_new", cz * n)
    p_old, c["m_mul_old"] = fq("mul_old", z * h)
    h_new, c["m_add_h"] = fq("add_h", p_new + p_old)

    c.update(a_hn=a_hn, r_raw=r_raw, z_raw=z_raw, n_raw=n_raw,
             r=r, z=z, n=n, cz=cz)
    return h_new, c


def _mul(g, mask):
    return g if mask is None else g * mask


def _qat_step_backward(dh, c, wq: GRUWeights, grads):
    """Backward through one (optionally fake-quantized) step; returns dh_prev."""
    x, h_prev = c["x"], c["h_prev"]

    g = _mul(dh, c["m_add_h"])
    g_new = _mul(g, c["m_mul_new"])
    dcz = g_new * c["n"]
    dn = g_new * c["cz"]
    g_old = _mul(g, c["m_mul_old"])
    dz = g_old * h_prev
    dh_prev = g_old * c["z"]

    dz = dz - _mul(dcz, c["m_compl_z"])

    dn_pre = _mul(dn, c["m_tanh_n"]) * (1.0 - c["n_raw"] ** 2)
    ds_n = _mul(dn_pre, c["m_add_n"])
    da_in = ds_n
    g_pr = _mul(ds_n, c["m_mul_r"])
    dr = g_pr * c["a_hn"]
    da_hn = g_pr * c["r"]

    dr_pre = _mul(dr, c["m_sig_r"]) * c["r_raw"] * (1.0 - c["r_raw"])
    ds_r = _mul(dr_pre, c["m_add_r"])
    dz_pre = _mul(dz, c["m_sig_z"]) * c["z_raw"] * (1.0 - c["z_raw"])
    ds_z = _mul(dz_pre, c["m_add_z"])

    for name, da, inp in (("w_ir", ds_r, x), ("w_iz", ds_z, x), ("w_in", da_in, x),
                          ("w_hr", ds_r, h_prev), ("w_hz", ds_z, h_prev),
                          ("w_hn", da_hn, h_prev)):
        da_in_pre = _mul(da, c["m_" + name])
        grads[name] += da_in_pre.T @ inp
        grads["b" + name[1:]] += da_in_pre.sum(axis=0)
        if name.startswith("w_h"):
            dh_prev = dh_prev + da_in_pre @ getattr(wq, name)
    return dh_prev


def loss_and_grads(w: GRUWeights, X, y, quantizer: QatQuantizer | None = None):
    """Mean cross-entropy of final-step logits and gradients via BPTT."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    batch, timesteps = X.shape[0], X.shape[1]
    wq = quantizer.quantized_weights(w) if quantizer is not None else w

    h = np.zeros((batch, w.dims.hidden_size))
    caches = []
    for t in range(timesteps):
        h, c = _qat_step_forward(X[:, t], h, wq, quantizer)
        caches.append(c)

    logits = h @ wq.w_c.T + wq.b_c
    shifted = logits - logits.max(axis=1, keepdims=True)
    expd = np.exp(shifted)
    probs = expd / expd.sum(axis=1, keepdims=True)
    loss = float(-np.mean(np.log(probs[np.arange(batch), y] + 1e-300)))

    grads = {name: np.zeros_like(arr) for name, arr in w.items()}
    dlogits = probs.copy()
    dlogits[np.arange(batch), y] -= 1.0
    dlogits /= batch
    grads["w_c"] += dlogits.T @ h
    grads["b_c"] += dlogits.sum(axis=0)
    dh = dlogits @ wq.w_c

    for c in reversed(caches):
        dh = _qat_step_backward(dh, c, wq, grads)
    return loss, grads


def _qat_accuracy(w, quantizer, X, y):
    quantizer.training = False
    try:
        wq = quantizer.quantized_weights(w)
        batch = X.shape[0]
        h = np.zeros((batch, w.dims.hidden_size))
        for t in range(X.shape[1]):
            h, _ = _qat_step_forward(X[:, t], h, wq, quantizer)
        preds = np.argmax(h @ wq.w_c.T + wq.b_c, axis=1)
        return float(np.mean(preds == y))
    finally:
        quantizer.training = True


def train(data, cfg: TrainConfig, quantizer: QatQuantizer | None = None,
          initial: GRUWeights | None = None, dims: ModelDims | None = None,
          history: list | None = None) -> GRUWeights:
    """Mini-batch Adam on softmax cross-entropy with full BPTT.

    Holds out cfg.validation_fraction of the data, trains on
    cfg.train_fraction of the remainder, and returns the weights with the
    best validation accuracy (validated every cfg.validate_every epochs
    and after the final epoch).
    """
    X, y = np.asarray(data.X, dtype=np.float64), np.asarray(data.y)
    if len(X) == 0:
        raise ValueError("empty dataset")
    if dims is None:
        if initial is None:
            raise ValueError("either initial weights or dims are required")
        dims = initial.dims
    if y.max() >= dims.num_classes:
        raise ValueError("labels exceed num_classes")

    rng = np.random.default_rng(cfg.seed)
    order = rng.permutation(len(X))
    n_val = max(1, int(round(cfg.validation_fraction * len(X))))
    val_idx, pool = order[:n_val], order[n_val:]
    n_train = max(1, int(round(cfg.train_fraction * len(pool))))
    train_idx = pool[:n_train]
    X_tr, y_tr = X[train_idx], y[train_idx]
    X_val, y_val = X[val_idx], y[val_idx]

    w = initial.copy() if initial is not None else init_weights(dims, seed=cfg.seed)
    if cfg.epochs == 0:
        return w

    m_state = {k: np.zeros_like(v) for k, v in w.items()}
    v_state = {k: np.zeros_like(v) for k, v in w.items()}
    step = 0
    best_acc, best_w = -1.0, w.copy()

    def validate():
        nonlocal best_acc, best_w
        acc = (_qat_accuracy(w, quantizer, X_val, y_val) if quantizer is not None
               else accuracy_float(w, X_val, y_val))
        if acc > best_acc:
            best_acc, best_w = acc, w.copy()
        return acc

    for epoch in range(cfg.epochs):
        perm = rng.permutation(len(X_tr))
        epoch_losses = []
        for start in range(0, len(X_tr), cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            loss, grads = loss_and_grads(w, X_tr[idx], y_tr[idx], quantizer)
            if not math.isfinite(loss):
                raise RuntimeError(
                    f"non-finite loss {loss} at epoch {epoch}, batch offset {start}")
            epoch_losses.append(loss)

            norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
            if norm > cfg.clip_norm > 0:
                scale = cfg.clip_norm / norm
                for g in grads.values():
                    g *= scale

            step += 1
            bc1 = 1.0 - cfg.beta1**step
            bc2 = 1.0 - cfg.beta2**step
            for name, arr in w.items():
                g = grads[name]
                m_state[name] = cfg.beta1 * m_state[name] + (1 - cfg.beta1) * g
                v_state[name] = cfg.beta2 * v_state[name] + (1 - cfg.beta2) * g * g
                arr -= cfg.learning_rate * (m_state[name] / bc1) / (
                    np.sqrt(v_state[name] / bc2) + cfg.eps)

        if history is not None:
            history.append(float(np.mean(epoch_losses)))
        if (epoch + 1) % cfg.validate_every == 0 or epoch == cfg.epochs - 1:
            validate()

    return best_w


def qat_finetune(w: GRUWeights, genome_bits, data, cfg: TrainConfig,
                 history: list | None = None) -> GRUWeights:
    """Fine-tune pretrained weights with fake-quant at all 17 block outputs."""
    quantizer = QatQuantizer(genome_bits)
    if cfg.epochs == 0:
        return w.copy()
    return train(data, cfg, quantizer=quantizer, initial=w, history=history)
