"""Full model: encoder + proposal bank + rater + boundary head."""

from dataclasses import dataclass, asdict

import numpy as np

from .boundary import BoundaryPredictor
from .encoder import EncoderConfig, FeatureEncoder
from .proposals import ProposalBank, ProposalRater, RoiConfig


@dataclass
class ModelConfig:
    d: int = 256
    conv_blocks: int = 4
    kernel: int = 7
    heads: int = 8
    dropout: float = 0.1
    n_proposals: int = 300
    roi_len: int = 16
    lstm_hidden: int = 0       # 0 -> d // 2
    max_proposal_len: float = 1.0
    d_video: int = 500
    d_query: int = 300
    max_frames: int = 64

    def validate(self):
        self.encoder_config().validate()
        RoiConfig(l=self.roi_len).validate()
        if self.n_proposals < 1:
            raise ValueError("need at least one proposal")
        if not 0.0 < self.max_proposal_len <= 1.0:
            raise ValueError(f"max proposal length must be in (0, 1], got {self.max_proposal_len}")
        if self.max_frames < 2:
            raise ValueError("need at least 2 frames")
        return self

    def encoder_config(self):
        return EncoderConfig(d=self.d, conv_blocks=self.conv_blocks,
                             kernel=self.kernel, heads=self.heads,
                             dropout=self.dropout)

    @property
    def hidden(self):
        return self.lstm_hidden if self.lstm_hidden > 0 else self.d // 2

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass
class ForwardOut:
    pair: object            # EncodedPair
    scores: object          # Tensor (N,) of candidate scores
    intervals: list         # N decoded (s, e) floats, the RoIAlign spans
    boundary: object = None # BoundaryDistributions when requested


class LPNet:
    """Propose-and-rank network over one (video, query) sample."""

    def __init__(self, cfg: ModelConfig, rng, disable_mhsa=False):
        cfg.validate()
        self.cfg = cfg
        self.encoder = FeatureEncoder(cfg.encoder_config(), cfg.d_video, cfg.d_query, rng)
        self.rater = ProposalRater(cfg.d, RoiConfig(l=cfg.roi_len), cfg.heads, rng,
                                   disable_mhsa=disable_mhsa)
        self.boundary = BoundaryPredictor(cfg.d, cfg.hidden, rng)

    def new_bank(self, rng):
        return ProposalBank(self.cfg.n_proposals, self.cfg.d, rng,
                            max_len=self.cfg.max_proposal_len)

    def forward(self, features, query_feats, bank, rng=None, train=False,
                need_boundary=True):
        """features: (T, d_video) array; query_feats: (M, d_query) array."""
        features = np.asarray(features, dtype=np.float64)
        if features.shape[0] < 2:
            raise ValueError("need at least 2 frames")
        pair = self.encoder.encode(features, query_feats, rng=rng, train=train)
        intervals = bank.decode_boxes()
        scores = self.rater.rate_all(pair.v_fused, bank, pair.q_pooled,
                                     intervals=intervals)
        dists = self.boundary(pair.v_fused) if need_boundary else None
        return ForwardOut(pair=pair, scores=scores, intervals=intervals,
                          boundary=dists)

    def params(self):
        out = self.encoder.params("enc")
        out += self.rater.params("rater")
        out += self.boundary.params("boundary")
        return out
