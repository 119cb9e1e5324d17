"""Shared fixtures kept deliberately small; heavyweight trained-model
fixtures live in test_acceptance.py so unit runs stay fast."""

import numpy as np
import pytest

from barcodemae.model import ModelConfig
from barcodemae.seqdata import SyntheticCorpusConfig, generate_synthetic


@pytest.fixture(scope="session")
def tiny_model_config():
    return ModelConfig(
        variant="barcode_mae",
        enc_layers=1,
        enc_heads=1,
        dec_layers=1,
        dec_heads=1,
        d_model=16,
        d_ff=32,
        k=2,
        max_tokens=32,
    )


@pytest.fixture(scope="session")
def small_corpus():
    cfg = SyntheticCorpusConfig(
        n_genera=3,
        species_per_genus=3,
        records_per_species=8,
        seq_len=64,
        genus_divergence=0.3,
        species_divergence=0.1,
        noise_rate=0.02,
    )
    return generate_synthetic(cfg, seed=5)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
