import numpy as np
import pytest

from conftest import random_dataset
from modelrobust import (
    Dataset,
    SeededStream,
    builtin_population,
    conditional_influence,
    conditional_parameter,
    contamination_derivative,
    estimation_offsets,
    fit_functional,
    huber_spec,
    influence_values,
    mean_spec,
    ols_fit,
    ols_spec,
    partial_influence_x,
    population_parameter,
    quantile_spec,
    sandwich_variance,
    variance_decomposition,
)
from modelrobust.exceptions import DimensionMismatch, SingularBread


def test_mean_influence_and_sandwich():
    y = np.array([1.0, 4.0, 2.0, 7.0])
    est = fit_functional(mean_spec(), Dataset(np.ones((4, 1)), y))
    ic = influence_values(est)
    assert np.allclose(ic[:, 0], y - y.mean())
    assert abs(ic.sum()) < 1e-12
    rep = sandwich_variance(est)
    assert rep.av_total[0, 0] == pytest.approx(np.mean((y - y.mean()) ** 2))
    assert rep.se[0] == pytest.approx(np.sqrt(np.var(y) / 4))


def test_ols_influence_formula_and_hc1():
    d = random_dataset(50, 3, 11)
    est = ols_fit(d)
    X, y = d.regressors, d.response
    r = y - X @ est.theta_hat
    oracle = (np.linalg.inv(X.T @ X / 50) @ (X * r[:, None]).T).T
    assert np.allclose(influence_values(est), oracle, atol=1e-12)
    a, b = sandwich_variance(est), sandwich_variance(est, hc1=True)
    assert np.allclose(b.av_total, a.av_total * 50 / 47)
    assert np.allclose(a.av_total, a.av_total.T)
    assert np.linalg.eigvalsh(a.av_total).min() >= -1e-10


def test_singular_bread():
    from modelrobust.functionals import FunctionalEstimate

    est = FunctionalEstimate(np.zeros(2), np.ones((3, 2)), np.zeros((2, 2)), True, 0, 0.0, np.ones(3))
    with pytest.raises(SingularBread):
        sandwich_variance(est)


@pytest.mark.parametrize("spec", [ols_spec(), huber_spec(1.0)], ids=["ols", "huber"])
def test_contamination_derivative_matches_influence(spec):
    d = random_dataset(200, 2, 13, noise=1.0)
    est = fit_functional(spec, d)
    binv = np.linalg.inv(est.jacobian)
    g = SeededStream(14).generator()
    for _ in range(5):
        x0 = np.array([1.0, g.normal()])
        y0 = float(x0 @ est.theta_hat + g.normal() * 0.5)
        fd = contamination_derivative(spec, d, y0, x0)
        ic = -binv @ spec.bind(d.regressors, d.response).score(est.theta_hat, np.array([y0]), x0[None, :])[0]
        assert np.linalg.norm(fd - ic) <= 1e-3 * np.linalg.norm(ic)


def test_conditional_parameter_well_specified_is_truth():
    pop = builtin_population("linear-hetero")
    for seed in range(3):
        X = pop.sample(30, SeededStream(seed)).regressors
        assert np.allclose(conditional_parameter(ols_spec(), X, pop), [1.0, 2.0], atol=1e-10)


def test_conditional_parameter_quadratic_closed_form():
    pop = builtin_population("quadratic", intercept=False)
    x = pop.sample(40, SeededStream(2)).regressors[:, 0]
    th = conditional_parameter(ols_spec(), x[:, None], pop)
    assert th[0] == pytest.approx(np.sum(x**3) / np.sum(x**2), rel=1e-12)
    assert population_parameter(ols_spec(), pop)[0] == pytest.approx(0.75, abs=1e-10)


@pytest.mark.parametrize("spec", [ols_spec(), huber_spec(0.3)], ids=["ols", "huber"])
def test_deterministic_population_noise_offset_vanishes(spec):
    pop = builtin_population("deterministic-quadratic")
    d = pop.sample(500, SeededStream(3))
    th = fit_functional(spec, d).theta_hat
    tx = conditional_parameter(spec, d.regressors, pop, theta0=th)
    rep = estimation_offsets(th, tx, population_parameter(spec, pop))
    assert np.abs(rep.noise_eo).max() <= 1e-8
    assert np.array_equal(rep.total_eo, rep.noise_eo + rep.approx_eo)


def test_offsets_shape_check_and_zero_case():
    rep = estimation_offsets([1.0, 2.0], [1.0, 2.0], [1.0, 2.0])
    assert not np.any(rep.total_eo)
    with pytest.raises(DimensionMismatch):
        estimation_offsets([1.0], [1.0, 2.0], [1.0, 2.0])


def test_decomposition_well_specified_and_deterministic():
    rep = variance_decomposition(ols_spec(), builtin_population("linear-homo"))
    assert np.abs(rep.meat_approx).max() <= 1e-8
    rep = variance_decomposition(ols_spec(), builtin_population("deterministic-quadratic"))
    assert np.abs(rep.meat_noise).max() == 0.0


@pytest.mark.parametrize("name,spec", [
    ("quadratic", ols_spec()),
    ("sine", huber_spec(0.5)),
    ("linear-hetero", quantile_spec(0.3)),
    ("logistic-misspec", None),
])
def test_pythagorean_meat_identity(name, spec):
    from modelrobust import logistic_spec

    spec = spec or logistic_spec()
    pop = builtin_population(name)
    rep = variance_decomposition(spec, pop)
    # brute-force V[psi] over (X, Y); dense trapezoid in y so kinked scores are integrated accurately
    from scipy.stats import norm

    from modelrobust.inference import _bound

    sp = _bound(spec, pop)
    X, m = pop.regressor_quadrature()
    if pop.noise.kind == "gaussian":
        Z = pop.covariates(X)
        mu, sd = pop.mean_fn(Z), np.broadcast_to(pop.noise.sd(Z), (X.shape[0],))
        u = np.linspace(-12, 12, 24001)
        w = norm.pdf(u) * (u[1] - u[0])
        w[[0, -1]] /= 2
        Y = mu[None, :] + sd[None, :] * u[:, None]
        W = np.repeat(w[:, None], X.shape[0], axis=1)
    else:
        Y, W = pop.response_nodes(X)
    q = rep.theta.size
    s1, s2 = np.zeros(q), np.zeros((q, q))
    for k in range(Y.shape[0]):
        psi = sp.score(rep.theta, Y[k], X)
        mk = W[k] * m
        s1 += mk @ psi
        s2 += (psi * mk[:, None]).T @ psi
    V = s2 - np.outer(s1, s1)
    assert np.linalg.norm(rep.meat_noise + rep.meat_approx - V) <= 1e-6 * max(1.0, np.linalg.norm(V))


def test_ols_decomposition_closed_form():
    pop = builtin_population("quadratic")
    rep = variance_decomposition(ols_spec(), pop)
    beta = rep.theta
    X, m = pop.regressor_quadrature()
    Sxx = (X * m[:, None]).T @ X
    assert np.allclose(rep.bread, -Sxx, atol=1e-12)
    assert np.allclose(rep.meat_noise, 0.25 * Sxx, atol=1e-10)
    e = X[:, 1] ** 2 - X @ beta
    assert np.allclose(rep.meat_approx, (X * (m * e**2)[:, None]).T @ X, atol=1e-10)


def test_partial_influence_well_specified_is_zero():
    pop = builtin_population("linear-homo")
    for x in np.linspace(0.05, 0.95, 4):
        assert np.abs(partial_influence_x(ols_spec(), pop, [1.0, x])).max() <= 1e-6


def test_partial_influence_matches_conditional_influence_when_misspecified():
    pop = builtin_population("quadratic")
    xs = np.linspace(0.05, 0.95, 5)
    ic = conditional_influence(ols_spec(), pop, np.column_stack([np.ones(5), xs]))
    pis = np.array([partial_influence_x(ols_spec(), pop, [1.0, x]) for x in xs])
    assert np.allclose(pis, ic, rtol=1e-3, atol=1e-7)
    assert np.sign(ic[0, 1]) != np.sign(ic[2, 1]) or np.sign(ic[2, 1]) != np.sign(ic[4, 1])
