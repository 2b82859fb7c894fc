from pathlib import Path

import pytest

from codeconcepts.dataset import split
from codeconcepts.synth import synthesize_corpus

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def corpus():
    """A split 400-function synthetic VD corpus."""
    return split(synthesize_corpus(400, 0.1, 7), (0.8, 0.1, 0.1), 7)


@pytest.fixture(scope="session")
def fixtures_dir():
    return FIXTURES


@pytest.fixture(scope="session")
def small_result(corpus):
    """A briefly trained concept-supervised checkpoint on ``corpus``."""
    from codeconcepts.train import TrainConfig, train

    tr = [r for r in corpus if r.split == "train"]
    va = [r for r in corpus if r.split == "val"]
    return train(TrainConfig(lambda1=10.0, d=16, epochs=4, warmup_epochs=2), tr, va)


@pytest.fixture(scope="session")
def probe_records():
    from dataclasses import replace

    return [replace(r, split="probe") for r in synthesize_corpus(120, 0.1, 7, prefix="probe")]
