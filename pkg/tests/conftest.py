import numpy as np
import pytest

from splesp.assignment import AnchorGrid
from splesp.synth_world import DatasetSpec, generate_dataset


@pytest.fixture(scope="session")
def small_spec():
    return DatasetSpec(n_train_scenes=16, n_test_scenes=8, seed=3)


@pytest.fixture(scope="session")
def small_dataset(small_spec):
    return generate_dataset(small_spec)


@pytest.fixture
def grid():
    return AnchorGrid(12, 8, 8.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
