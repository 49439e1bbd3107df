"""Shared fixtures: deterministic RNGs and a small synthetic corpus."""

import numpy as np
import pytest

from tfse.synth import make_corpus


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def corpus_manifest(tmp_path_factory) -> str:
    """A tiny clip collection reused by training, CLI, and acceptance tests."""
    root = tmp_path_factory.mktemp("corpus")
    return make_corpus(str(root), n_speech=6, n_noise=3, duration_s=1.0, seed=0)
