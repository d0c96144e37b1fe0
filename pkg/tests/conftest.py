from pathlib import Path

import numpy as np
import pytest

from smj.disability import disability_family
from smj.intensity import constant_family, shift

CONFIG_DIR = Path(__file__).resolve().parents[1] / "src" / "smj" / "data" / "configs"


@pytest.fixture(scope="session")
def absorbing2():
    """1 -> 2 at rate 1, state 2 absorbing."""
    return constant_family([[-1.0, 1.0], [0.0, 0.0]])


@pytest.fixture(scope="session")
def disability():
    return disability_family()


@pytest.fixture(scope="session")
def disability40(disability):
    """Disability family on the policy clock of a 40-year-old."""
    return shift(disability, 40.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
