# -*- coding: utf-8 -*-

import numpy as np
import pytest

from lowprec_distill import logger


def pytest_addoption(parser):
    parser.addoption(
        "--run-slow",
        action="store_true",
        default=False,
        help="Run desk-scale training experiments.",
    )


def pytest_collection_modifyitems(config, items):
    if config.getoption("--run-slow"):
        return

    _skip_slow = pytest.mark.skip(reason="needs --run-slow option to run")
    for _item in items:
        if "slow" in _item.keywords:
            _item.add_marker(_skip_slow)


@pytest.fixture(scope="session", autouse=True)
def setup_and_teardown():
    # Equivalent of setUp
    logger.info("Setting up...")

    yield  # This is where the testing happens!

    # Equivalent of tearDown
    logger.info("Tearing down!")


@pytest.fixture
def rng():
    yield np.random.default_rng(12345)
