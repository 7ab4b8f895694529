"""Boundary-aware auxiliary head.

Two stacked BiLSTMs read the fused video sequence; linear heads give
per-frame start/end logits, softmaxed over time.  Ground-truth boundary
frames are relaxed into small triangular distributions and the KL
divergence between labels and predictions regularizes training.  The
head plays no part in inference, which ranks proposals only.
"""

from dataclasses import dataclass

import numpy as np

from . import ndtensor as nd
from .encoder import Linear, glorot


@dataclass
class BoundaryDistributions:
    p_start: object
    p_end: object
    logits_start: object
    logits_end: object


@dataclass
class RelaxedLabels:
    y_start: np.ndarray
    y_end: np.ndarray
    radius: int


class BiLSTM:
    def __init__(self, d_in, hidden, rng):
        self.hidden = hidden
        def init(fan_in, fan_out, shape):
            return nd.param(glorot(rng, fan_in, fan_out, shape=shape))
        self.wx_f = init(d_in, 4 * hidden, (d_in, 4 * hidden))
        self.wh_f = init(hidden, 4 * hidden, (hidden, 4 * hidden))
        self.b_f = nd.param(np.zeros(4 * hidden))
        self.wx_b = init(d_in, 4 * hidden, (d_in, 4 * hidden))
        self.wh_b = init(hidden, 4 * hidden, (hidden, 4 * hidden))
        self.b_b = nd.param(np.zeros(4 * hidden))

    def __call__(self, x):
        return nd.bilstm(x, self.wx_f, self.wh_f, self.b_f,
                         self.wx_b, self.wh_b, self.b_b)

    def params(self, prefix):
        return [(f"{prefix}.wx_f", self.wx_f), (f"{prefix}.wh_f", self.wh_f),
                (f"{prefix}.b_f", self.b_f), (f"{prefix}.wx_b", self.wx_b),
                (f"{prefix}.wh_b", self.wh_b), (f"{prefix}.b_b", self.b_b)]


class BoundaryPredictor:
    """Stacked BiLSTMs with per-frame start/end softmax heads."""

    def __init__(self, d, hidden, rng):
        self.lstm_s = BiLSTM(d, hidden, rng)
        self.lstm_e = BiLSTM(2 * hidden, hidden, rng)
        self.head_s = Linear(2 * hidden, 1, rng)
        self.head_e = Linear(2 * hidden, 1, rng)

    def __call__(self, v_fused, mask=None):
        T = v_fused.shape[0]
        if T < 2:
            raise ValueError("boundary prediction needs at least 2 frames")
        h_s = self.lstm_s(v_fused)
        h_e = self.lstm_e(h_s)
        logits_s = nd.reshape(self.head_s(h_s), (T,))
        logits_e = nd.reshape(self.head_e(h_e), (T,))
        add_mask = None if mask is None else np.asarray(mask, dtype=np.float64).reshape(-1)
        p_s = nd.softmax(logits_s, axis=0, mask=add_mask)
        p_e = nd.softmax(logits_e, axis=0, mask=add_mask)
        return BoundaryDistributions(p_start=p_s, p_end=p_e,
                                     logits_start=logits_s, logits_end=logits_e)

    def params(self, prefix="boundary"):
        out = self.lstm_s.params(f"{prefix}.lstm_s")
        out += self.lstm_e.params(f"{prefix}.lstm_e")
        out += self.head_s.params(f"{prefix}.head_s")
        out += self.head_e.params(f"{prefix}.head_e")
        return out


def relax_labels(boundary_idx, T, radius=1):
    """Triangular distribution around a boundary frame, normalized to 1.

    Weight 1 at the boundary, decaying linearly to 0 at distance
    radius + 1, truncated at the sequence ends.  radius=0 is one-hot.
    """
    if not 0 <= boundary_idx < T:
        raise ValueError(f"boundary index {boundary_idx} outside [0, {T})")
    dist = np.abs(np.arange(T) - boundary_idx)
    raw = np.maximum(0.0, 1.0 - dist / (radius + 1.0))
    return raw / raw.sum()


def make_labels(gt_norm, T, radius=1):
    """Relaxed start/end label pair for a normalized gt interval."""
    s, e = gt_norm
    idx_s = int(round(s * (T - 1)))
    idx_e = int(round(e * (T - 1)))
    return RelaxedLabels(y_start=relax_labels(idx_s, T, radius),
                         y_end=relax_labels(idx_e, T, radius),
                         radius=radius)


def _kl_label_to_pred(logits, y):
    """D(Y || P) built from logits so P > 0 is structural."""
    lp = nd.log_softmax(logits, axis=0)
    entropy = float(np.sum(np.where(y > 0, y * np.log(np.maximum(y, 1e-300)), 0.0)))
    cross = nd.tsum(nd.mul(nd.astensor(y), lp))
    return nd.sub(nd.astensor(entropy), cross)


def _kl_pred_to_label(logits, y):
    """D(P || Y), the printed order; labels floored to keep it finite."""
    lp = nd.log_softmax(logits, axis=0)
    p = nd.softmax(logits, axis=0)
    log_y = np.log(np.maximum(y, 1e-12))
    return nd.tsum(nd.mul(p, nd.sub(lp, nd.astensor(log_y))))


def kl_boundary_loss(pred: BoundaryDistributions, labels: RelaxedLabels,
                     pred_to_label=False):
    """Sum of start and end KL terms as a scalar Tensor.

    Default direction is D(Y||P): the reverse order blows up whenever the
    prediction puts mass outside the relaxed support, which any real
    softmax output does.  pred_to_label=True switches to D(P||Y) with the
    labels floored at 1e-12, for comparison runs.
    """
    kl = _kl_pred_to_label if pred_to_label else _kl_label_to_pred
    return nd.add(kl(pred.logits_start, labels.y_start),
                  kl(pred.logits_end, labels.y_end))
