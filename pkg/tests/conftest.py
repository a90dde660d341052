import numpy as np
import pytest

from modelrobust import Dataset, SeededStream


@pytest.fixture
def exact_linear():
    """Three rows on the line y = 1 + 2x, with an intercept column."""
    X = np.array([[1.0, 1.0], [1.0, 2.0], [1.0, 3.0]])
    return Dataset(X, np.array([3.0, 5.0, 7.0]), ("intercept", "x"))


@pytest.fixture
def rng():
    return SeededStream(12345).generator()


def random_dataset(n, p, seed, noise=1.0):
    g = SeededStream(seed).generator()
    X = np.column_stack([np.ones(n), g.normal(size=(n, p - 1))])
    beta = np.arange(1, p + 1, dtype=float)
    y = X @ beta + noise * g.standard_t(5, size=n)
    return Dataset(X, y, ("intercept",) + tuple(f"x{j}" for j in range(1, p)))
