"""Cross-modal feature encoder.

Raw video and query features are projected to a shared width, refined by
separate convolution/self-attention/FFN stacks, then fused: a trilinear
similarity matrix between the two sequences drives query-to-video and
video-to-query attention, and the concatenated views pass through a
feed-forward layer to give the query-conditioned video sequence.  The
query side is additionally pooled into a single sentence vector with a
learned softmax weighting.
"""

from dataclasses import dataclass

import numpy as np

from . import ndtensor as nd


def glorot(rng, fan_in, fan_out, shape=None):
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, (fan_in, fan_out) if shape is None else shape)


@dataclass
class EncoderConfig:
    d: int = 256
    conv_blocks: int = 4
    kernel: int = 7
    heads: int = 8
    dropout: float = 0.1

    def validate(self):
        if self.d % self.heads != 0:
            raise ValueError(f"width {self.d} not divisible by {self.heads} heads")
        if self.kernel % 2 != 1:
            raise ValueError(f"conv kernel must be odd, got {self.kernel}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")
        return self


@dataclass
class EncodedPair:
    v_enc: object   # refined video sequence, (T, d)
    q_enc: object   # refined query sequence, (M, d)
    v_fused: object # query-conditioned video sequence, (T, d)
    q_pooled: object  # sentence vector, (d,)


class Linear:
    def __init__(self, d_in, d_out, rng, bias=True):
        self.w = nd.param(glorot(rng, d_in, d_out))
        self.b = nd.param(np.zeros(d_out)) if bias else None

    def __call__(self, x):
        y = nd.matmul(nd.astensor(x), self.w)
        if self.b is not None:
            y = nd.add(y, self.b)
        return y

    def params(self, prefix):
        out = [(f"{prefix}.w", self.w)]
        if self.b is not None:
            out.append((f"{prefix}.b", self.b))
        return out


class LayerNorm:
    def __init__(self, d, eps=1e-5):
        self.gamma = nd.param(np.ones(d))
        self.beta = nd.param(np.zeros(d))
        self.eps = eps

    def __call__(self, x):
        return nd.layernorm(x, self.gamma, self.beta, eps=self.eps)

    def params(self, prefix):
        return [(f"{prefix}.gamma", self.gamma), (f"{prefix}.beta", self.beta)]


class FeedForward:
    """Position-wise two-layer FFN with ReLU between."""

    def __init__(self, d, rng, hidden=None):
        hidden = hidden or d
        self.lin1 = Linear(d, hidden, rng)
        self.lin2 = Linear(hidden, d, rng)

    def __call__(self, x):
        return self.lin2(nd.relu(self.lin1(x)))

    def params(self, prefix):
        return self.lin1.params(f"{prefix}.lin1") + self.lin2.params(f"{prefix}.lin2")


class MultiHeadSelfAttention:
    def __init__(self, d, heads, rng):
        if d % heads != 0:
            raise ValueError(f"width {d} not divisible by {heads} heads")
        self.heads = heads
        self.dh = d // heads
        self.wq = Linear(d, d, rng)
        self.wk = Linear(d, d, rng)
        self.wv = Linear(d, d, rng)
        self.wo = Linear(d, d, rng)

    def __call__(self, x, mask=None):
        """x: (L, d); mask: optional additive (L,) array, -1e9 at masked keys."""
        q, k, v = self.wq(x), self.wk(x), self.wv(x)
        scale = 1.0 / np.sqrt(self.dh)
        add_mask = None if mask is None else np.asarray(mask, dtype=np.float64).reshape(1, -1)
        heads_out = []
        for i in range(self.heads):
            cols = slice(i * self.dh, (i + 1) * self.dh)
            qi, ki, vi = q[:, cols], k[:, cols], v[:, cols]
            scores = nd.matmul(qi, nd.transpose(ki)) * scale
            attn = nd.softmax(scores, axis=1, mask=add_mask)
            heads_out.append(nd.matmul(attn, vi))
        return self.wo(nd.concat(heads_out, axis=1))

    def params(self, prefix):
        out = []
        for name, lin in (("wq", self.wq), ("wk", self.wk), ("wv", self.wv), ("wo", self.wo)):
            out += lin.params(f"{prefix}.{name}")
        return out


class EmbeddingEncoder:
    """Refinement stack: conv blocks, then self-attention, then an FFN,
    each wrapped as layernorm -> sublayer -> dropout -> residual."""

    def __init__(self, cfg: EncoderConfig, rng):
        self.dropout = cfg.dropout
        self.convs = []
        for _ in range(cfg.conv_blocks):
            ln = LayerNorm(cfg.d)
            w = nd.param(glorot(rng, cfg.kernel * cfg.d, cfg.d,
                                shape=(cfg.kernel, cfg.d, cfg.d)))
            b = nd.param(np.zeros(cfg.d))
            self.convs.append((ln, w, b))
        self.ln_attn = LayerNorm(cfg.d)
        self.attn = MultiHeadSelfAttention(cfg.d, cfg.heads, rng)
        self.ln_ffn = LayerNorm(cfg.d)
        self.ffn = FeedForward(cfg.d, rng)

    def __call__(self, x, rng=None, train=False, mask=None):
        for ln, w, b in self.convs:
            y = nd.add(nd.conv1d(ln(x), w), b)
            x = nd.add(x, nd.dropout(y, self.dropout, rng, train))
        y = self.attn(self.ln_attn(x), mask=mask)
        x = nd.add(x, nd.dropout(y, self.dropout, rng, train))
        y = self.ffn(self.ln_ffn(x))
        x = nd.add(x, nd.dropout(y, self.dropout, rng, train))
        return x

    def params(self, prefix):
        out = []
        for i, (ln, w, b) in enumerate(self.convs):
            out += ln.params(f"{prefix}.conv{i}.ln")
            out += [(f"{prefix}.conv{i}.w", w), (f"{prefix}.conv{i}.b", b)]
        out += self.ln_attn.params(f"{prefix}.ln_attn")
        out += self.attn.params(f"{prefix}.attn")
        out += self.ln_ffn.params(f"{prefix}.ln_ffn")
        out += self.ffn.params(f"{prefix}.ffn")
        return out


class FeatureEncoder:
    """Project, refine, fuse.  Video and query stacks have separate weights."""

    def __init__(self, cfg: EncoderConfig, d_video, d_query, rng):
        cfg.validate()
        self.cfg = cfg
        self.proj_v = Linear(d_video, cfg.d, rng)
        self.proj_q = Linear(d_query, cfg.d, rng)
        self.enc_v = EmbeddingEncoder(cfg, rng)
        self.enc_q = EmbeddingEncoder(cfg, rng)
        self.w_sim = nd.param(glorot(rng, 3 * cfg.d, 1, shape=(3 * cfg.d,)))
        self.cross_ffn = Linear(4 * cfg.d, cfg.d, rng)
        self.w_pool = nd.param(glorot(rng, cfg.d, 1, shape=(cfg.d,)))

    def project(self, v_raw, q_raw):
        return self.proj_v(v_raw), self.proj_q(q_raw)

    def similarity_matrix(self, v, q):
        """Trilinear similarity S[i,j] = w . [v_i ; q_j ; v_i*q_j], shape (T, M)."""
        d = self.cfg.d
        T, M = v.shape[0], q.shape[0]
        w1 = self.w_sim[0:d]
        w2 = self.w_sim[d:2 * d]
        w3 = self.w_sim[2 * d:3 * d]
        t1 = nd.reshape(nd.matmul(v, w1), (T, 1))
        t2 = nd.reshape(nd.matmul(q, w2), (1, M))
        t3 = nd.matmul(nd.mul(v, w3), nd.transpose(q))
        return nd.add(nd.add(t1, t2), t3)

    def cross_modal_attention(self, v, q, similarity=None, v_mask=None, q_mask=None):
        """Fuse the refined sequences into a query-conditioned video sequence.

        Row-softmax of S attends video->query, column-softmax query->video;
        the concatenated views [v; A; v*A; v*B] map back to width d.
        """
        S = self.similarity_matrix(v, q) if similarity is None else similarity
        row_mask = None if q_mask is None else np.asarray(q_mask, dtype=np.float64).reshape(1, -1)
        col_mask = None if v_mask is None else np.asarray(v_mask, dtype=np.float64).reshape(-1, 1)
        s_row = nd.softmax(S, axis=1, mask=row_mask)
        s_col = nd.softmax(S, axis=0, mask=col_mask)
        A = nd.matmul(s_row, q)
        B = nd.matmul(nd.matmul(s_row, nd.transpose(s_col)), v)
        feats = nd.concat([v, A, nd.mul(v, A), nd.mul(v, B)], axis=1)
        return nd.relu(self.cross_ffn(feats))

    def sentence_pool(self, q, q_mask=None):
        """Softmax-weighted average of word vectors -> (d,)."""
        logits = nd.matmul(q, self.w_pool)
        mask = None if q_mask is None else np.asarray(q_mask, dtype=np.float64).reshape(-1)
        alpha = nd.softmax(logits, axis=0, mask=mask)
        return nd.weighted_sum(alpha, q)

    def encode(self, v_raw, q_raw, rng=None, train=False, v_mask=None, q_mask=None):
        v0, q0 = self.project(v_raw, q_raw)
        v1 = self.enc_v(v0, rng=rng, train=train, mask=v_mask)
        q1 = self.enc_q(q0, rng=rng, train=train, mask=q_mask)
        v_fused = self.cross_modal_attention(v1, q1, v_mask=v_mask, q_mask=q_mask)
        q_pooled = self.sentence_pool(q1, q_mask=q_mask)
        return EncodedPair(v_enc=v1, q_enc=q1, v_fused=v_fused, q_pooled=q_pooled)

    def params(self, prefix="enc"):
        out = self.proj_v.params(f"{prefix}.proj_v")
        out += self.proj_q.params(f"{prefix}.proj_q")
        out += self.enc_v.params(f"{prefix}.enc_v")
        out += self.enc_q.params(f"{prefix}.enc_q")
        out.append((f"{prefix}.w_sim", self.w_sim))
        out += self.cross_ffn.params(f"{prefix}.cross_ffn")
        out.append((f"{prefix}.w_pool", self.w_pool))
        return out
