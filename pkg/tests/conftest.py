import numpy as np
import pytest

from gclab.numerics import Rng


def unit_rows(rng: Rng, n: int, d: int) -> np.ndarray:
    X = rng.normal(size=(n, d))
    return X / np.sqrt(np.sum(X * X, axis=1))[:, None]


@pytest.fixture
def rng():
    return Rng(12345)
