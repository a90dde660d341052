import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from modelrobust import Dataset, SeededStream, fit_functional, ols_fit
from modelrobust.exceptions import DomainError
from modelrobust.scoring import (
    BernoulliLogisticFamily,
    BregmanGenerator,
    DensityModel,
    DiscreteLaw,
    GaussianLinearFamily,
    bregman_pointwise,
    d_alpha,
    divergence_D,
    entropy_H,
    expected_score,
    phi_alpha,
    phi_alpha_prime,
    scoring_objective,
    scoring_rule_S,
)

ALPHAS = [-2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0]
ATOMS = [0.0, 1.0, 2.0]


def law(*p):
    return DiscreteLaw(ATOMS, p)


@pytest.mark.parametrize("alpha", ALPHAS)
def test_generator_normalization(alpha):
    assert phi_alpha(1.0, alpha) == pytest.approx(0.0, abs=1e-15)
    assert phi_alpha_prime(1.0, alpha) == pytest.approx(0.0, abs=1e-15)


def test_generator_values():
    assert phi_alpha(np.e, 0.0) == pytest.approx(1.0, abs=1e-14)
    q = np.linspace(0.1, 5.0, 50)
    assert np.max(np.abs(phi_alpha(q, 1e-8) - phi_alpha(q, 0.0))) <= 1e-6
    assert np.max(np.abs(phi_alpha(q, -1 + 1e-8) - phi_alpha(q, -1.0))) <= 1e-6
    assert phi_alpha(0.0, 1.0) == pytest.approx(0.5)


@pytest.mark.parametrize("alpha", [0.0, -1.0, -0.5])
def test_generator_domain(alpha):
    with pytest.raises(DomainError):
        phi_alpha(0.0, alpha)


def test_bregman_identities():
    sq = (lambda q: q**2, lambda q: 2 * q)
    p, q = np.array([0.3, 2.0, 5.0]), np.array([1.0, 0.1, 4.0])
    assert np.allclose(bregman_pointwise(*sq, p, q), (p - q) ** 2)
    assert np.allclose(bregman_pointwise(*sq, p, p), 0.0)


def test_bregman_matches_closed_form_table():
    g = SeededStream(31).generator()
    for _ in range(50):
        a = float(g.uniform(-2.5, 2.5))
        p, q = g.uniform(0.05, 4.0, size=2)
        via_phi = bregman_pointwise(lambda t: phi_alpha(t, a), lambda t: phi_alpha_prime(t, a), p, q)
        assert via_phi == pytest.approx(d_alpha(p, q, a), rel=1e-9, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.sampled_from(ALPHAS), st.floats(0.01, 10.0), st.floats(0.01, 10.0))
def test_discrepancy_nonnegative(alpha, p, q):
    d = float(d_alpha(p, q, alpha))
    assert d >= -1e-12
    if abs(p - q) > 1e-3:
        assert d > 0
    assert abs(float(d_alpha(p, p, alpha))) <= 1e-12


def test_l2_and_kl_divergences():
    P, Q = law(0.2, 0.3, 0.5), law(1 / 3, 1 / 3, 1 / 3)
    p, q = P.probs, Q.probs
    assert divergence_D(P, Q, 1.0) == pytest.approx(0.5 * np.sum((p - q) ** 2), abs=1e-15)
    assert divergence_D(P, Q, 0.0) == pytest.approx(np.sum(p * np.log(p / q)), abs=1e-15)
    for a in ALPHAS:
        assert abs(divergence_D(P, P, a)) <= 1e-12


@pytest.mark.parametrize("alpha", ALPHAS)
def test_divergence_is_score_minus_entropy(alpha):
    g = SeededStream(3).generator()
    for _ in range(20):
        P, Q = law(*g.dirichlet(np.ones(3))), law(*g.dirichlet(np.ones(3)))
        lhs = divergence_D(P, Q, alpha)
        rhs = expected_score(P, Q, alpha) - entropy_H(P, alpha)
        if alpha == -1.0:
            # Itakura-Saito: equality up to the measure of the support
            rhs -= 3.0
        assert lhs == pytest.approx(rhs, abs=1e-12)


@pytest.mark.parametrize("alpha", [-1.0, 0.0, 0.5, 1.0, 2.0])
def test_entropy_concavity(alpha):
    g = SeededStream(4).generator()
    for _ in range(20):
        p, q = g.dirichlet(np.ones(3)), g.dirichlet(np.ones(3))
        for lam in np.arange(1, 10) / 10:
            mix = entropy_H(law(*(lam * p + (1 - lam) * q)), alpha)
            assert mix >= lam * entropy_H(law(*p), alpha) + (1 - lam) * entropy_H(law(*q), alpha) - 1e-12


def test_log_score_is_negative_log_likelihood():
    Q = law(0.2, 0.3, 0.5)
    assert np.allclose(scoring_rule_S(np.array(ATOMS), Q, 0.0), -np.log([0.2, 0.3, 0.5]))


def test_gini_score_on_standard_normal():
    Q = DensityModel(stats.norm.pdf)
    sq, _ = integrate.quad(lambda y: stats.norm.pdf(y) ** 2, -np.inf, np.inf)
    assert sq == pytest.approx(1 / (2 * np.sqrt(np.pi)), rel=1e-10)
    assert float(scoring_rule_S(np.array([0.0]), Q, 1.0)[0]) == pytest.approx(-stats.norm.pdf(0) + sq / 2, abs=1e-9)
    assert entropy_H(Q, 1.0) == pytest.approx(-sq / 2, abs=1e-9)
    assert expected_score(Q, Q, 1.0) == pytest.approx(entropy_H(Q, 1.0), abs=1e-8)


def test_density_must_integrate_to_one():
    with pytest.raises(DomainError):
        DensityModel(lambda y: 2 * stats.norm.pdf(y))


def test_user_generator_matches_power_family():
    P, Q = law(0.1, 0.6, 0.3), law(0.4, 0.4, 0.2)
    gen = BregmanGenerator.power(0.5)
    assert gen.divergence(P, Q) == pytest.approx(divergence_D(P, Q, 0.5), abs=1e-14)
    assert gen.expected_score(P, Q) - gen.entropy(P) == pytest.approx(gen.divergence(P, Q), abs=1e-14)
    sq = BregmanGenerator(lambda q: q**2, lambda q: 2 * q)
    assert sq.divergence(P, Q) == pytest.approx(np.sum((P.probs - Q.probs) ** 2), abs=1e-15)


def simplex_grid(step=0.05):
    k = int(round(1 / step))
    for i, j in itertools.product(range(1, k), repeat=2):
        if i + j < k:
            yield np.array([i, j, k - i - j]) / k


@pytest.mark.parametrize("alpha", [-1.0, 0.0, 0.5, 1.0])
def test_propriety_brute_force(alpha):
    grid = list(simplex_grid())
    laws = [law(*p) for p in grid]
    own = np.array([expected_score(L, L, alpha) for L in laws])
    worst = np.inf
    for a, P in enumerate(laws):
        for b, Q in enumerate(laws):
            gap = expected_score(P, Q, alpha) - own[a]
            if a == b:
                assert abs(gap) <= 1e-12
            else:
                assert gap > 0
            worst = min(worst, gap)
    assert worst >= -1e-12


def test_gaussian_log_score_fit_is_ols():
    g = SeededStream(8).generator()
    X = np.column_stack([np.ones(200), g.normal(size=200)])
    y = X @ [0.5, -1.0] + g.normal(size=200) * 0.7
    d = Dataset(X, y)
    est = fit_functional(scoring_objective(GaussianLinearFamily(), 0.0), d)
    assert np.allclose(est.theta_hat[:2], ols_fit(d).theta_hat, atol=1e-8)
    resid = y - X @ est.theta_hat[:2]
    assert np.exp(est.theta_hat[2]) == pytest.approx(np.sqrt(np.mean(resid**2)), rel=1e-8)


def test_bernoulli_log_score_fit_is_logistic_mle():
    from modelrobust import logistic_spec

    g = SeededStream(9).generator()
    X = np.column_stack([np.ones(400), g.normal(size=400)])
    y = (g.random(400) < 1 / (1 + np.exp(-(X @ [0.3, 1.2])))).astype(float)
    d = Dataset(X, y)
    a = fit_functional(scoring_objective(BernoulliLogisticFamily(), 0.0), d).theta_hat
    b = fit_functional(logistic_spec(), d).theta_hat
    assert np.allclose(a, b, atol=1e-8)


def test_power_score_resists_gross_outliers():
    g = SeededStream(10).generator()
    n = 1000
    y = g.normal(size=n)
    y[: n // 10] = 50.0 + g.normal(size=n // 10)
    d = Dataset(np.ones((n, 1)), y)
    fam = GaussianLinearFamily()
    t0 = fit_functional(scoring_objective(fam, 0.0), d).theta_hat[0]
    t1 = fit_functional(scoring_objective(fam, 1.0), d).theta_hat[0]
    assert abs(t1) < abs(t0)
    assert abs(t1) < 0.2
