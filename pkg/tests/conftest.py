import numpy as np
import pytest

from storyfill import corpus as corpus_mod
from storyfill.model import ModelConfig
from storyfill.tokenizer import train_tokenizer


@pytest.fixture(scope="session")
def grammar():
    return corpus_mod.default_grammar()


@pytest.fixture(scope="session")
def stories(grammar):
    return corpus_mod.generate_synthetic_corpus(grammar, 60, seed=11)


@pytest.fixture(scope="session")
def vocab(stories):
    return train_tokenizer(stories, 300)


@pytest.fixture
def micro_lm_config(vocab):
    return ModelConfig(vocab_size=len(vocab), n_ctx=96, n_layers=1, n_heads=2,
                       d_model=16, d_ff=32, causal=True)


@pytest.fixture
def micro_ranker_config(vocab):
    return ModelConfig(vocab_size=len(vocab), n_ctx=160, n_layers=1, n_heads=2,
                       d_model=16, d_ff=32, causal=False, n_classes=2)


def randomize_head(params, seed=0, scale=0.1):
    """Give the zero-initialized output head random weights so probabilities
    are non-degenerate without any training."""
    rng = np.random.default_rng(seed)
    for key in ("head.w", "head.b"):
        params[key] = (rng.standard_normal(params[key].shape) * scale).astype(
            params[key].dtype)
    return params
