import numpy as np
import pytest

from model import Graph, IsingModel, build_curie_weiss, build_torus_grid


def pytest_addoption(parser):
    parser.addoption('--runslow', action='store_true', default=False, help='run long statistical checks')


def pytest_configure(config):
    config.addinivalue_line('markers', 'slow: long statistical acceptance run (needs --runslow)')


def pytest_collection_modifyitems(config, items):
    if config.getoption('--runslow'):
        return
    skip_slow = pytest.mark.skip(reason='needs --runslow')
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def cw8():
    return build_curie_weiss(8, 0.5)


@pytest.fixture
def grid9():
    return build_torus_grid(3, 0.5)


@pytest.fixture
def single_node():
    return IsingModel(Graph(1, []), [])


@pytest.fixture
def pair_model():
    """Two spins joined by an edge of weight 0.5."""
    return IsingModel(Graph(2, [(0, 1)]), [0.5])


@pytest.fixture
def gen():
    return np.random.default_rng(12345)
