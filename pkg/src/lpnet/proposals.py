"""Learnable proposal bank and the propose-and-rank pipeline.

Each proposal is a (center, length) box stored as unconstrained logits
(sigmoid keeps the decoded values in (0,1) with live gradients at every
point) plus a learnable feature vector.  Scoring a sample runs: decode
boxes, self-attend the proposal features, cut candidate windows out of
the fused video sequence with temporal RoIAlign, gate them with their
proposal feature, fuse with the pooled query, and rate each candidate
with a small MLP ending in a sigmoid.
"""

import csv
from dataclasses import dataclass

import numpy as np

from . import ndtensor as nd
from .encoder import Linear, MultiHeadSelfAttention, glorot


@dataclass
class RoiConfig:
    l: int = 16
    samples_per_bin: int = 1

    def validate(self):
        if self.l < 1:
            raise ValueError(f"need at least one bin, got {self.l}")
        return self


@dataclass
class CandidateScore:
    index: int
    interval: tuple  # (s, e) normalized, s <= e
    score: float     # in (0, 1)


class ProposalBank:
    """N learnable boxes + N learnable proposal feature vectors."""

    def __init__(self, n, d, rng, max_len=1.0):
        if n < 1:
            raise ValueError("need at least one proposal")
        self.n = n
        self.max_len = float(max_len)
        self.box_logits = nd.param(rng.normal(0.0, 0.5, (n, 2)))
        self.feats = nd.param(rng.normal(0.0, 0.02, (n, d)))

    def decode_array(self):
        """(N, 4) float array of [center, length, start, end]; no gradients."""
        z = self.box_logits.data
        c = 0.5 * (np.tanh(0.5 * z[:, 0]) + 1.0)
        w = 0.5 * (np.tanh(0.5 * z[:, 1]) + 1.0) * self.max_len
        s = np.maximum(0.0, c - w / 2.0)
        e = np.minimum(1.0, c + w / 2.0)
        return np.stack([c, w, s, e], axis=1)

    def decode_boxes(self):
        """List of N (start, end) tuples, always 0 <= s <= e <= 1."""
        arr = self.decode_array()
        return [(float(s), float(e)) for s, e in arr[:, 2:]]

    def decode_cw(self, index):
        """Differentiable (center, length) of one proposal, each shape (1,)."""
        row = self.box_logits[index, :]
        c = nd.sigmoid(row[0:1])
        w = nd.sigmoid(row[1:2]) * self.max_len
        return c, w

    def params(self, prefix="bank"):
        return [(f"{prefix}.box_logits", self.box_logits),
                (f"{prefix}.feats", self.feats)]


class ProposalRater:
    """Interaction and scoring head over candidate windows."""

    def __init__(self, d, roi: RoiConfig, heads, rng, disable_mhsa=False):
        roi.validate()
        self.d = d
        self.l = roi.l
        self.disable_mhsa = disable_mhsa
        self.attn = MultiHeadSelfAttention(d, heads, rng)
        self.w_p = nd.param(glorot(rng, d, d))
        self.w_c = nd.param(glorot(rng, roi.l * d, d))
        self.fuse = Linear(2 * d, d, rng)
        self.rate1 = Linear(d, d, rng)
        self.rate2 = Linear(d, 1, rng)

    def mhsa_proposals(self, feats):
        """Self-attention over the N proposal features, with residual."""
        if self.disable_mhsa:
            return feats
        return nd.add(feats, self.attn(feats))

    def dynamic_interact(self, c, p):
        """Gate candidate content with its proposal feature.

        c: (l, d) or (N, l, d); p: (d,) or (N, d).  The projected window
        is multiplied channel-wise by p, flattened, and mapped back to d.
        """
        single = nd.astensor(c).ndim == 2
        if single:
            c = nd.reshape(nd.astensor(c), (1, self.l, self.d))
            p = nd.reshape(nd.astensor(p), (1, self.d))
        N = c.shape[0]
        flat = nd.reshape(c, (N * self.l, self.d))
        proj = nd.reshape(nd.matmul(flat, self.w_p), (N, self.l, self.d))
        gated = nd.mul(proj, nd.reshape(p, (N, 1, self.d)))
        out = nd.matmul(nd.reshape(gated, (N, self.l * self.d)), self.w_c)
        return nd.reshape(out, (self.d,)) if single else out

    def fuse_and_rate(self, c_tilde, p_tilde, q_pooled):
        """Combine candidate, proposal, and query vectors into scores.

        c_tilde/p_tilde: (d,) or (N, d); q_pooled: (d,).  Returns a scalar
        Tensor for single inputs, else (N,) of sigmoid scores.
        """
        single = nd.astensor(c_tilde).ndim == 1
        if single:
            c_tilde = nd.reshape(nd.astensor(c_tilde), (1, self.d))
            p_tilde = nd.reshape(nd.astensor(p_tilde), (1, self.d))
        N = c_tilde.shape[0]
        q_mat = nd.broadcast_to(nd.reshape(q_pooled, (1, self.d)), (N, self.d))
        x = nd.concat([nd.add(c_tilde, p_tilde), q_mat], axis=1)
        F = nd.relu(self.fuse(x))
        logits = self.rate2(nd.relu(self.rate1(F)))
        scores = nd.sigmoid(nd.reshape(logits, (N,)))
        return scores[0] if single else scores

    def rate_all(self, v_fused, bank: ProposalBank, q_pooled, intervals=None):
        """Score every proposal against one sample.

        intervals defaults to the bank's decoded boxes; they enter the
        RoIAlign as plain floats, so no gradient reaches the box logits
        from this path.
        """
        if intervals is None:
            intervals = bank.decode_boxes()
        arr = np.asarray(intervals, dtype=np.float64)
        windows = nd.temporal_roialign(v_fused, arr[:, 0], arr[:, 1], self.l)
        p_tilde = self.mhsa_proposals(bank.feats)
        c_tilde = self.dynamic_interact(windows, p_tilde)
        return self.fuse_and_rate(c_tilde, p_tilde, q_pooled)

    def params(self, prefix="rater"):
        out = self.attn.params(f"{prefix}.attn")
        out += [(f"{prefix}.w_p", self.w_p), (f"{prefix}.w_c", self.w_c)]
        out += self.fuse.params(f"{prefix}.fuse")
        out += self.rate1.params(f"{prefix}.rate1")
        out += self.rate2.params(f"{prefix}.rate2")
        return out


def rank_candidates(scores):
    """Index of the best score; ties go to the lowest index."""
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    if scores.size < 1:
        raise ValueError("no candidates to rank")
    return int(np.argmax(scores))


def candidate_scores(bank: ProposalBank, scores):
    """Package decoded intervals and scores for inspection/inference."""
    boxes = bank.decode_boxes()
    vals = np.asarray(scores, dtype=np.float64).reshape(-1)
    return [CandidateScore(index=i, interval=boxes[i], score=float(vals[i]))
            for i in range(bank.n)]


PROPOSAL_CSV_HEADER = ["index", "center", "length", "start", "end"]


def write_proposal_csv(path, bank: ProposalBank):
    arr = bank.decode_array()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(PROPOSAL_CSV_HEADER)
        for i in range(bank.n):
            c, w, s, e = arr[i]
            writer.writerow([i, f"{c:.6f}", f"{w:.6f}", f"{s:.6f}", f"{e:.6f}"])


def read_proposal_csv(path):
    """(N, 4) array of [center, length, start, end]."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != PROPOSAL_CSV_HEADER:
            raise ValueError(f"unexpected proposal CSV header: {header}")
        rows = [[float(x) for x in row[1:]] for row in reader]
    return np.asarray(rows, dtype=np.float64).reshape(-1, 4)
