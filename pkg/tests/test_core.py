import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from modelrobust import (
    Dataset,
    NoiseLaw,
    NormalLaw,
    SeededStream,
    SyntheticPopulation,
    UniformLaw,
    acceptability_check,
    normalize_weights,
    sample_population,
)
from modelrobust.exceptions import DimensionMismatch, UnsupportedNoiseLaw


def test_acceptability_examples():
    assert acceptability_check(np.array([[1, 1], [1, 2], [1, 3]])) == "acceptable"
    assert acceptability_check(np.array([[1, 2], [2, 4], [3, 6]])) == "collinear"
    X = SeededStream(1).generator().standard_normal((200, 3))
    s = np.linalg.svd(X, compute_uv=False)
    assert s[-1] / s[0] > 1e-10
    assert acceptability_check(X) == "acceptable"


def test_acceptability_ignores_zero_weight_rows():
    X = np.array([[1.0, 0.0], [1.0, 1.0], [1.0, 2.0]])
    d = Dataset(X, np.zeros(3), case_weights=[1.0, 0.0, 0.0])
    assert acceptability_check(d) == "collinear"
    assert acceptability_check(d.with_weights([1.0, 1.0, 0.0])) == "acceptable"


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_acceptability_permutation_invariant(seed):
    g = np.random.default_rng(seed)
    X = g.normal(size=(8, 3))
    if seed % 2:
        X[:, 2] = 2 * X[:, 1] - X[:, 0]
    perm = g.permutation(8)
    assert acceptability_check(X) == acceptability_check(X[perm])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.0, 1e6, allow_nan=False), min_size=1, max_size=30).filter(lambda w: sum(w) > 0))
def test_weights_mean_one(w):
    d = Dataset(np.ones((len(w), 1)), np.zeros(len(w)), case_weights=w)
    assert abs(d.weights.mean() - 1) <= 1e-12
    assert abs(normalize_weights(w).mean() - 1) <= 1e-12


def test_dataset_validation():
    with pytest.raises(DimensionMismatch):
        Dataset(np.ones((3, 2)), np.ones(4))
    with pytest.raises(ValueError):
        Dataset(np.array([[1.0], [np.nan]]), np.ones(2))
    with pytest.raises(ValueError):
        Dataset(np.ones((2, 1)), np.ones(2), case_weights=[-1.0, 2.0])
    d = Dataset(np.ones((2, 1)), np.ones(2))
    with pytest.raises(ValueError):
        d.regressors[0, 0] = 5.0  # read-only storage


def test_stream_determinism_and_independence():
    a = SeededStream(7, 3).generator().random(5)
    b = SeededStream(7, 3).generator().random(5)
    c = SeededStream(7, 4).generator().random(5)
    assert np.array_equal(a, b)
    assert not np.allclose(a, c)
    assert np.array_equal(SeededStream(7, 3).child(2).generator().random(3),
                          SeededStream(7, 3, (2,)).generator().random(3))


def test_stream_frozen_values():
    # frozen at implementation time; a change here breaks reproducibility of saved runs
    assert SeededStream(2024).generator().random(3).tolist() == [
        0.9320739976883254, 0.8259604770248575, 0.5284153524469336]
    assert SeededStream(2024, 5).child(1).generator().random(2).tolist() == [
        0.28755572128818796, 0.6982518780129332]


def test_zero_noise_sampling_exact():
    pop = SyntheticPopulation(UniformLaw(0, 1), lambda Z: 2 * Z[:, 0], NoiseLaw("zero"), intercept=False)
    d = sample_population(pop, 100, SeededStream(3))
    assert np.array_equal(d.response, 2 * d.regressors[:, 0])


def test_sampling_bitwise_reproducible():
    pop = SyntheticPopulation(NormalLaw(), lambda Z: 1 + Z[:, 0], NoiseLaw("gaussian", 1.0))
    d1 = pop.sample(50, SeededStream(9, 1))
    d2 = pop.sample(50, SeededStream(9, 1))
    assert np.array_equal(d1.regressors, d2.regressors)
    assert np.array_equal(d1.response, d2.response)


def test_sample_mean_matches_quadrature():
    pop = SyntheticPopulation(UniformLaw(0, 1), lambda Z: 1 + 2 * Z[:, 0], NoiseLaw("gaussian", 1.0))
    n = 100_000
    d = pop.sample(n, SeededStream(11))
    target = pop.expect(lambda X: pop.mean(X))
    assert target == pytest.approx(2.0, abs=1e-12)
    sd_y = np.sqrt(1 + 4 / 12)
    assert abs(d.response.mean() - target) <= 3 * sd_y / np.sqrt(n)


def test_unsupported_noise_law():
    with pytest.raises(UnsupportedNoiseLaw):
        NoiseLaw("cauchy")
    assert NoiseLaw("bernoulli-logistic").kind == "bernoulli"
    assert NoiseLaw("deterministic").kind == "zero"


def test_quadrature_rules_integrate_moments():
    x, w = UniformLaw(0, 1).quadrature()
    assert w.sum() == pytest.approx(1, abs=1e-14)
    assert w @ x**3 == pytest.approx(0.25, abs=1e-14)
    z, v = NormalLaw(1.0, 2.0).quadrature()
    assert v @ z == pytest.approx(1.0, abs=1e-12)
    assert v @ (z - 1) ** 4 == pytest.approx(3 * 16, rel=1e-10)


def test_response_nodes_match_moments():
    pop = SyntheticPopulation(UniformLaw(0, 1), lambda Z: Z[:, 0] ** 2, NoiseLaw("gaussian", 0.5))
    X = pop.design(np.array([[0.2], [0.9]]))
    for lin in (True, False):
        Y, W = pop.response_nodes(X, linear_in_y=lin)
        assert np.allclose((W * Y).sum(0), [0.04, 0.81])
        assert np.allclose((W * Y**2).sum(0) - [0.04**2, 0.81**2], 0.25)


def test_column_lookup():
    d = Dataset(np.eye(2), np.zeros(2), ("a", "b"))
    assert d.column_index("b") == 1
    assert np.array_equal(d.column("a"), [1.0, 0.0])
    with pytest.raises(KeyError):
        d.column_index("zz")
