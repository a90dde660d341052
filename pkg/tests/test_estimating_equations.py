import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_dataset
from modelrobust import (
    Dataset,
    SolverConfig,
    bread_jacobian,
    ee_solve,
    fit_functional,
    huber_spec,
    logistic_spec,
    ols_fit,
    ols_spec,
    quantile_spec,
)
from modelrobust.estimating_equations import solve_masses
from modelrobust.exceptions import InvalidHyperparameter, NoConvergence


def test_newton_matches_closed_form_ols():
    d = random_dataset(60, 4, 3)
    est = ee_solve(ols_spec(), d)
    assert np.allclose(est.theta_hat, ols_fit(d).theta_hat, atol=1e-8)
    assert est.converged and est.iterations <= 3


def test_weighted_newton_matches_weighted_least_squares():
    d = random_dataset(50, 3, 8)
    w = np.linspace(0.2, 3.0, 50)
    dw = d.with_weights(w)
    sw = np.sqrt(dw.weights)
    oracle, *_ = np.linalg.lstsq(d.regressors * sw[:, None], d.response * sw, rcond=None)
    assert np.allclose(ee_solve(ols_spec(), dw).theta_hat, oracle, atol=1e-9)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 5000), st.sampled_from(["huber", "quantile", "logistic"]))
def test_solution_is_a_root(seed, name):
    d = random_dataset(80, 2, seed, noise=1.5)
    if name == "logistic":
        p = 1 / (1 + np.exp(-(d.regressors @ [0.2, 0.8])))
        y = (np.random.default_rng(seed).random(80) < p).astype(float)
        d = Dataset(d.regressors, y)
        if len(set(y)) < 2:
            return
    spec = {"huber": huber_spec(1.0), "quantile": quantile_spec(0.4, 0.05), "logistic": logistic_spec()}[name]
    try:
        est = fit_functional(spec, d)
    except Exception as exc:  # separation on a tiny sample is a legitimate outcome
        assert name == "logistic", exc
        return
    assert est.mean_score_norm <= 1e-10
    g = est.scores.mean(0)
    assert np.abs(g).max() <= 1e-9


def test_analytic_and_difference_jacobians_agree():
    d = random_dataset(200, 3, 12)
    p = 1 / (1 + np.exp(-(d.regressors @ [0.1, 0.5, -0.4])))
    y = (np.random.default_rng(1).random(200) < p).astype(float)
    d = Dataset(d.regressors, y)
    spec = logistic_spec()
    theta = fit_functional(spec, d).theta_hat
    A = bread_jacobian(spec, d, theta)
    F = bread_jacobian(spec, d, theta, SolverConfig(jacobian_mode="central-difference"))
    assert np.allclose(A, F, atol=1e-6)


def test_huber_jacobian_is_minus_inlier_gram():
    d = random_dataset(100, 2, 4, noise=2.0)
    spec = huber_spec(1.0)
    theta = fit_functional(spec, d).theta_hat
    r = d.response - d.regressors @ theta
    X = d.regressors[np.abs(r) < 1.0]
    assert np.allclose(bread_jacobian(spec, d, theta), -X.T @ X / 100, atol=1e-12)


def test_difference_mode_solver_reaches_same_root():
    d = random_dataset(70, 2, 5, noise=2.0)
    a = fit_functional(huber_spec(1.2), d).theta_hat
    b = fit_functional(huber_spec(1.2), d, SolverConfig(jacobian_mode="central-difference")).theta_hat
    assert np.allclose(a, b, atol=1e-8)


def test_explicit_initial_value_and_damping():
    d = random_dataset(40, 2, 6)
    cfg = SolverConfig(init=np.array([10.0, -10.0]), damping=0.5, max_iter=200)
    assert np.allclose(ee_solve(ols_spec(), d, cfg).theta_hat, ols_fit(d).theta_hat, atol=1e-8)


def test_iteration_cap_raises():
    d = random_dataset(40, 2, 6, noise=3.0)
    with pytest.raises(NoConvergence):
        ee_solve(huber_spec(0.5), d, SolverConfig(max_iter=1, damping=0.01))


def test_signed_masses_are_accepted():
    X = np.ones((3, 1))
    y = np.array([1.0, 2.0, 10.0])
    theta, _, _ = solve_masses(ols_spec(), X, y, np.array([0.6, 0.6, -0.2]))
    assert theta[0] == pytest.approx((0.6 + 1.2 - 2.0) / 1.0)


@pytest.mark.parametrize("kw", [{"tol": 0.0}, {"max_iter": 0}, {"damping": 1.5},
                                {"jacobian_mode": "forward"}])
def test_solver_config_validation(kw):
    with pytest.raises(InvalidHyperparameter):
        SolverConfig(**kw)


def test_bad_initial_vector():
    d = random_dataset(10, 2, 1)
    with pytest.raises(InvalidHyperparameter):
        ee_solve(ols_spec(), d, SolverConfig(init=np.array([1.0, 2.0, 3.0])))


def test_mean_functional_single_newton_step():
    from modelrobust import mean_spec

    y = np.array([3.0, -1.0, 5.5, 2.0])
    d = Dataset(np.ones((4, 1)), y)
    est = ee_solve(mean_spec(), d, SolverConfig(init="zeros"))
    assert est.iterations == 1
    assert est.theta_hat[0] == pytest.approx(y.mean(), abs=1e-14)
