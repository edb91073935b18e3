import pathlib

import pytest
import torch
from hypothesis import settings

from gtcycle.model import ModelConfig, Seq2SeqModel
from gtcycle.tokenizer import build_vocab

settings.register_profile("suite", deadline=None, max_examples=60)
settings.load_profile("suite")

FIXTURES = pathlib.Path(__file__).parent / "fixtures"


@pytest.fixture
def fixtures_dir() -> pathlib.Path:
    return FIXTURES


@pytest.fixture
def tiny_model():
    """A small seeded model with a matching throwaway vocabulary."""
    vocab = build_vocab(["alpha beta gamma delta epsilon zeta"] * 3, 16)
    torch.manual_seed(7)
    config = ModelConfig(
        vocab_size=len(vocab),
        d_model=16,
        n_heads=2,
        n_layers_enc=1,
        n_layers_dec=1,
        d_ff=32,
        max_len=32,
        dropout_rate=0.0,
    )
    return Seq2SeqModel(config), vocab
