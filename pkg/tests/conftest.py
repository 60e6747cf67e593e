import time

import numpy as np
import pytest

from stdnn import synthetic, training
from stdnn.descriptor import DescriptorNet

ACCEPTANCE_LINES: list[str] = []


def train_default(seed=0):
    """A default-configured net trained on ten synthetic 32x32 images."""
    start = time.perf_counter()
    data = synthetic.dataset(10, seed=seed)
    result = training.train(DescriptorNet.initialize(seed=seed), data, training.TrainConfig())
    return {"net": result.net, "history": result.history, "data": data,
            "seconds": time.perf_counter() - start}


def held_out_instance():
    return synthetic.dataset(1, seed=1)[0]


@pytest.fixture(scope="session")
def trained():
    return train_default()


@pytest.fixture(scope="session")
def held_out():
    return held_out_instance()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
