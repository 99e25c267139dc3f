import os

import numpy as np
import pytest

from dipdefense import GeneratorConfig, LinearClassifier


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run the long statistical tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow") or os.environ.get("DIPDEFENSE_RUN_SLOW") == "1":
        return
    skip = pytest.mark.skip(reason="slow; enable with --runslow or DIPDEFENSE_RUN_SLOW=1")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_gen():
    """Fast generator settings for pipeline tests on 16x16 images."""
    return GeneratorConfig.small(max_iterations=40, trace_samples=20, rng_seed=3)


@pytest.fixture
def linear3x16():
    """Random 3-class linear classifier on (3, 16, 16) images."""
    r = np.random.default_rng(7)
    d = 3 * 16 * 16
    return LinearClassifier(r.normal(scale=0.05, size=(3, d)), r.normal(scale=0.1, size=3), input_shape=(3, 16, 16))
