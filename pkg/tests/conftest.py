import numpy as np
import pytest

from lpnet.data import EmbeddingTable, SynthSpec, attach_queries, synth_generate
from lpnet.model import ModelConfig


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def tiny_dataset():
    """12 small synthetic samples with hash embeddings attached."""
    spec = SynthSpec(num_samples=12, T=12, d_v=10, vocab_size=12, seed=3,
                     modes=[(0.5, 0.3, 0.05, 0.03, 1.0)], signal_strength=3.0)
    return attach_queries(synth_generate(spec), EmbeddingTable(mode="hash", dim=8))


@pytest.fixture
def tiny_model_cfg():
    return ModelConfig(d=8, conv_blocks=1, kernel=3, heads=2, dropout=0.0,
                       n_proposals=5, roi_len=4, lstm_hidden=3,
                       d_video=10, d_query=8, max_frames=12)
