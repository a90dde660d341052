"""Influence functions, sandwich variances and estimation offsets.

Sign convention: with ``psi = -grad L`` the influence function is
``IC(y, x) = -Lambda^{-1} psi(theta; y, x)`` so that
``theta_hat - theta(P) ~ mean(IC)``.  Sandwich matrices are unaffected by
the sign.

Population-level quantities (``theta(X)``, ``theta(P)``, the split meats and
the partial influence in ``x``) are computed from the quadrature oracles of
:class:`~modelrobust.core.SyntheticPopulation`: the regressor law becomes a
set of weighted design nodes and every conditional response law a small set
of weighted response nodes, so each population functional is again a
weighted estimating-equation problem.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .core import Dataset, SyntheticPopulation
from .estimating_equations import SolverConfig, _initial, fit_functional, mean_jacobian, solve_masses
from .exceptions import DimensionMismatch, SingularBread
from .functionals import FunctionalEstimate, FunctionalSpec

__all__ = [
    "VarianceReport",
    "OffsetReport",
    "influence_values",
    "sandwich_variance",
    "contamination_derivative",
    "conditional_parameter",
    "population_parameter",
    "estimation_offsets",
    "variance_decomposition",
    "conditional_influence",
    "partial_influence_x",
]


@dataclass(frozen=True, eq=False)
class VarianceReport:
    """Bread, meats and sandwich asymptotic variances.

    ``meat_total`` is the (uncentered) empirical ``E[psi psi']`` in data
    mode and the population ``V[psi]`` in oracle mode.  The split fields are
    ``None`` in data mode.
    """

    bread: np.ndarray
    meat_total: np.ndarray
    av_total: np.ndarray
    se: np.ndarray | None
    n: int | None = None
    meat_noise: np.ndarray | None = None
    meat_approx: np.ndarray | None = None
    av_noise: np.ndarray | None = None
    av_approx: np.ndarray | None = None
    theta: np.ndarray | None = None


@dataclass(frozen=True, eq=False)
class OffsetReport:
    theta_hat: np.ndarray
    theta_X: np.ndarray
    theta_P: np.ndarray
    total_eo: np.ndarray
    noise_eo: np.ndarray
    approx_eo: np.ndarray


def _inv_bread(bread):
    bread = np.asarray(bread, dtype=float)
    s = np.linalg.svd(bread, compute_uv=False)
    if s[0] == 0 or s[-1] / s[0] < 1e-13:
        raise SingularBread("bread (score Jacobian) is singular")
    return np.linalg.inv(bread)


def _sandwich(binv, meat):
    av = binv @ meat @ binv.T
    return (av + av.T) / 2


def influence_values(est: FunctionalEstimate) -> np.ndarray:
    """Per-case influence values ``-Lambda^{-1} w_i psi_i`` (``N x q``)."""
    binv = _inv_bread(est.jacobian)
    return -(est.weights[:, None] * est.scores) @ binv.T


def sandwich_variance(est: FunctionalEstimate, n: int | None = None, hc1: bool = False) -> VarianceReport:
    """Plug-in sandwich ``Lambda^{-1} E_N[psi psi'] Lambda^{-T}``.

    ``hc1=True`` multiplies the meat by ``N / (N - q)``.
    """
    n = est.n_cases if n is None else int(n)
    binv = _inv_bread(est.jacobian)
    ws = est.weights[:, None] * est.scores
    meat = ws.T @ ws / est.n_cases
    if hc1:
        meat = meat * n / (n - est.dim)
    av = _sandwich(binv, meat)
    se = np.sqrt(np.clip(np.diag(av), 0, None) / n)
    return VarianceReport(est.jacobian, meat, av, se, n, theta=est.theta_hat)


def contamination_derivative(spec: FunctionalSpec, data: Dataset, y0: float, x0, t: float = 1e-5,
                             cfg: SolverConfig | None = None) -> np.ndarray:
    """Central difference in ``t`` of ``theta((1 - t) P_N + t delta_(y0, x0))``.

    The contaminated measure carries signed masses at ``-t``; the
    estimating equations remain well defined for small ``|t|``.
    """
    cfg = cfg or SolverConfig(tol=1e-13, max_iter=200)
    spec = spec.bind(data.regressors, data.response)
    x0 = np.asarray(x0, dtype=float).ravel()
    X = np.vstack([data.regressors, x0])
    y = np.append(data.response, float(y0))
    base = data.weights / data.n_cases
    center = fit_functional(spec, data).theta_hat

    def theta_at(s):
        mass = np.append((1 - s) * base, s)
        return solve_masses(spec, X, y, mass, cfg, theta0=center)[0]

    return (theta_at(t) - theta_at(-t)) / (2 * t)


# -- population oracles ------------------------------------------------------------


def _gaussian_moments(spec, pop, X):
    """``(mu, sd)`` per row when the spec's exact Gaussian hook applies, else None."""
    if spec.gaussian_conditional is None or pop.noise.kind != "gaussian":
        return None
    Z = pop.covariates(X)
    mu = np.asarray(pop.mean_fn(Z), dtype=float)
    sd = np.broadcast_to(np.asarray(pop.noise.sd(Z), dtype=float), mu.shape)
    if not np.all(sd > 0):
        return None
    return mu, sd


def _expand(spec, pop, X, mass):
    """Weighted estimating-equation problem equivalent to the conditional one.

    Returns ``(spec, X, y, mass)``.  Normally every design row is repeated
    once per response node.  When the spec has an exact Gaussian hook the
    rows are kept as they are, ``y`` holds row indices and the returned
    spec's score is the exact conditional mean score.
    """
    gm = _gaussian_moments(spec, pop, X)
    if gm is not None:
        mu, sd = gm
        hook = spec.gaussian_conditional

        def score(theta, idx, Xr):
            i = idx.astype(int)
            return hook(theta, Xr, mu[i], sd[i])[0]

        def jac(theta, idx, Xr):
            i = idx.astype(int)
            return hook(theta, Xr, mu[i], sd[i])[2]

        oracle = replace(spec, name=spec.name + "|oracle", score=score, score_jacobian=jac,
                         objective=None, closed_form=None, batch_closed_form=None)
        return oracle, X, np.arange(X.shape[0], dtype=float), np.asarray(mass, dtype=float)
    Y, W = pop.response_nodes(X, linear_in_y=spec.linear_in_y)
    K = Y.shape[0]
    Xr = np.tile(X, (K, 1))
    return spec, Xr, Y.ravel(), (W * mass[None, :]).ravel()


def _bound(spec, pop):
    """Resolve data-dependent spec defaults against the population nodes."""
    if spec.binder is None:
        return spec
    X, _ = pop.regressor_quadrature()
    Y, _ = pop.response_nodes(X, linear_in_y=spec.linear_in_y)
    return spec.bind(np.tile(X, (Y.shape[0], 1)), Y.ravel())


def conditional_parameter(spec: FunctionalSpec, X, pop: SyntheticPopulation,
                          cfg: SolverConfig | None = None, mass=None, theta0=None) -> np.ndarray:
    """``theta(X)``: solve ``sum_i m_i E[psi(theta; Y, x_i) | x_i] = 0``.

    Parameters
    ----------
    X : array (n, p)
        Design rows, e.g. the regressors of a sampled dataset.
    mass : array (n,), optional
        Masses of the rows (default ``1/n`` each); may be signed.

    Raises
    ------
    OracleUnavailable
        If the population has no conditional quadrature.
    """
    cfg = cfg or SolverConfig()
    X = np.atleast_2d(np.asarray(X, dtype=float))
    mass = np.full(X.shape[0], 1.0 / X.shape[0]) if mass is None else np.asarray(mass, dtype=float)
    spec = _bound(spec, pop)
    sp, Xr, yr, mr = _expand(spec, pop, X, mass)
    if theta0 is None and sp is not spec:
        # the exact-moment problem has no objective; start from the node problem's pilot
        theta0 = _pilot(spec, pop, X, mass, cfg)
    return solve_masses(sp, Xr, yr, mr, cfg, theta0=theta0)[0]


def _pilot(spec, pop, X, mass, cfg):
    Y, W = pop.response_nodes(X, linear_in_y=spec.linear_in_y)
    Xr = np.tile(X, (Y.shape[0], 1))
    return _initial(spec, Xr, Y.ravel(), (W * mass[None, :]).ravel(), cfg)


def population_parameter(spec: FunctionalSpec, pop: SyntheticPopulation,
                         cfg: SolverConfig | None = None, weight_fn=None) -> np.ndarray:
    """``theta(P)`` by quadrature over ``P(X)``.

    ``weight_fn`` (design rows -> nonnegative weights) reweights the
    regressor law before the functional is applied.
    """
    cfg = cfg or SolverConfig(tol=1e-12)
    X, m = pop.regressor_quadrature()
    if weight_fn is not None:
        m = m * np.asarray(weight_fn(X), dtype=float)
        m = m / m.sum()
    return conditional_parameter(spec, X, pop, cfg, mass=m)


def estimation_offsets(theta_hat, theta_X, theta_P) -> OffsetReport:
    """Total, noise and approximation offsets; ``total = noise + approx``."""
    th, tx, tp = (np.atleast_1d(np.asarray(v, dtype=float)) for v in (theta_hat, theta_X, theta_P))
    if not (th.shape == tx.shape == tp.shape):
        raise DimensionMismatch("theta_hat, theta(X) and theta(P) must have equal shape")
    noise = th - tx
    approx = tx - tp
    return OffsetReport(th, tx, tp, noise + approx, noise, approx)


def _conditional_moments(spec, pop, theta, X):
    """``E[psi | x]`` (n x q) and ``V[psi | x]`` (n x q x q) at each row."""
    gm = _gaussian_moments(spec, pop, X)
    if gm is not None:
        mean, second, _ = spec.gaussian_conditional(theta, X, *gm)
        return mean, second - mean[:, :, None] * mean[:, None, :]
    Y, W = pop.response_nodes(X, linear_in_y=spec.linear_in_y)
    K, n = Y.shape
    psi = np.stack([spec.score(theta, Y[k], X) for k in range(K)])  # K x n x q
    mean = np.einsum("kn,knq->nq", W, psi)
    second = np.einsum("kn,knq,knr->nqr", W, psi, psi)
    var = second - mean[:, :, None] * mean[:, None, :]
    return mean, var


def variance_decomposition(spec: FunctionalSpec, pop: SyntheticPopulation, theta_P=None,
                           cfg: SolverConfig | None = None, n: int | None = None) -> VarianceReport:
    """Population sandwich with the meat split into noise and approximation parts.

    ``meat_noise = E[V[psi | X]]``, ``meat_approx = V[E[psi | X]]`` and
    ``meat_total = V[psi]``, all at ``theta(P)`` with the population bread.
    """
    cfg = cfg or SolverConfig(tol=1e-12)
    if theta_P is None:
        theta_P = population_parameter(spec, pop, cfg)
    theta_P = np.asarray(theta_P, dtype=float)
    spec = _bound(spec, pop)
    X, m = pop.regressor_quadrature()
    sp, Xr, yr, mr = _expand(spec, pop, X, m)
    bread = mean_jacobian(sp, theta_P, yr, Xr, mr, cfg.jacobian_mode, cfg.fd_step)
    cmean, cvar = _conditional_moments(spec, pop, theta_P, X)
    meat_noise = np.tensordot(m, cvar, axes=(0, 0))
    mu = m @ cmean
    meat_approx = (cmean * m[:, None]).T @ cmean - np.outer(mu, mu)
    meat_total = meat_noise + meat_approx
    binv = _inv_bread(bread)
    av = _sandwich(binv, meat_total)
    se = None if n is None else np.sqrt(np.clip(np.diag(av), 0, None) / n)
    return VarianceReport(
        bread, meat_total, av, se, n, meat_noise, meat_approx,
        _sandwich(binv, meat_noise), _sandwich(binv, meat_approx), theta_P,
    )


def conditional_influence(spec: FunctionalSpec, pop: SyntheticPopulation, x, theta_P=None,
                          cfg: SolverConfig | None = None) -> np.ndarray:
    """``E[IC(Y, X) | X = x] = -Lambda^{-1} E[psi(theta(P); Y, x) | x]``."""
    spec = _bound(spec, pop)
    rep = variance_decomposition(spec, pop, theta_P, cfg)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    cmean, _ = _conditional_moments(spec, pop, rep.theta, x)
    return -cmean @ _inv_bread(rep.bread).T


def partial_influence_x(spec: FunctionalSpec, pop: SyntheticPopulation, x, t_step: float = 1e-5,
                        cfg: SolverConfig | None = None) -> np.ndarray:
    """Derivative of ``theta(P_{Y|X} x ((1 - t) P_X + t delta_x))`` at ``t = 0``.

    Central difference in ``t`` with the conditional response law held
    fixed; ``x`` is a single design row.
    """
    cfg = cfg or SolverConfig(tol=1e-13, max_iter=200)
    x = np.asarray(x, dtype=float).ravel()
    Xq, m = pop.regressor_quadrature()
    X = np.vstack([Xq, x])
    center = population_parameter(spec, pop, cfg)

    def theta_at(t):
        mass = np.append((1 - t) * m, t)
        return conditional_parameter(spec, X, pop, cfg, mass=mass, theta0=center)

    return (theta_at(t_step) - theta_at(-t_step)) / (2 * t_step)
