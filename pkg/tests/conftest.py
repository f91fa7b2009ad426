import numpy as np
import pytest

from invlab.config import DatasetSpec
from invlab.harness import gen_dataset
from invlab.oracle import OracleDataset
from invlab.schedule import build_schedule


@pytest.fixture(scope="session")
def schedule():
    return build_schedule()


@pytest.fixture(scope="session")
def two_class():
    """Small two-class 2-D dataset, cheap enough for per-test inversions."""
    return gen_dataset(DatasetSpec(points_per_class=100, seed=3))


@pytest.fixture(scope="session")
def benchmark_data():
    """The default 1000-per-class benchmark dataset."""
    return gen_dataset(DatasetSpec())


@pytest.fixture
def tiny():
    rng = np.random.default_rng(11)
    return OracleDataset(rng.normal(size=(8, 2)), np.array([0, 1] * 4), 2)
