import numpy as np
import pytest

from srb import toyasr


@pytest.fixture(scope="session")
def toy():
    """One trained toy recognizer plus its training corpus, shared suite-wide."""
    return toyasr.train_toy(seed=0, n_utts=20)


@pytest.fixture(scope="session")
def toy_model(toy):
    return toy[0]


@pytest.fixture(scope="session")
def toy_corpus(toy):
    return toy[1]


@pytest.fixture(scope="session")
def toy_oracle(toy_model):
    return toyasr.CtcOracle(toy_model)


@pytest.fixture(scope="session")
def holdout_corpus():
    """Utterances the toy model never saw during training."""
    return toyasr.make_corpus(np.random.default_rng(123), "abcd", 20, prefix="ho")
