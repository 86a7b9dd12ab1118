import pytest
import torch

from univse.model import JointModel, ModelDims
from univse.synthcorpus import CorpusConfig, generate_corpus

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def tiny_synth():
    """Twelve scenes, two captions each; shared across the fast tests."""
    return generate_corpus(CorpusConfig(n_scenes=12, seed=3))


@pytest.fixture(scope="session")
def tiny_model(tiny_synth):
    """Untrained model over the tiny corpus (seeded init, no fitting)."""
    dims = ModelDims(embed_dim=24, basic_dim=16, modifier_dim=8, feature_depth=32)
    return JointModel.from_corpus(tiny_synth.corpus, dims=dims, seed=5)
