"""Regression functionals.

A :class:`FunctionalSpec` describes a functional through its per-case score
``psi(theta; y, x)`` (sign convention ``psi = -grad_theta L``), optionally its
objective ``L`` and the analytic per-case score Jacobian.  All callables are
vectorized over cases: ``score(theta, y, X)`` returns an ``n x q`` array,
``objective`` a length-``n`` array and ``score_jacobian`` an ``n x q x q``
array.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import expit
from scipy.stats import norm

from .core import Dataset, SyntheticPopulation, acceptability_check
from .exceptions import (
    CollinearRegressors,
    DimensionMismatch,
    InvalidHyperparameter,
    SingularSystem,
)

__all__ = [
    "FunctionalSpec",
    "FunctionalEstimate",
    "mean_spec",
    "ols_spec",
    "ridge_spec",
    "huber_spec",
    "quantile_spec",
    "logistic_spec",
    "ols_fit",
    "ridge_fit",
    "huber_rho",
    "check_loss",
]


@dataclass(frozen=True, eq=False)
class FunctionalSpec:
    """A regression functional defined by its estimating equations.

    Parameters
    ----------
    name : str
    score : callable ``(theta, y, X) -> (n, q)``
    objective : callable ``(theta, y, X) -> (n,)``, optional
    score_jacobian : callable ``(theta, y, X) -> (n, q, q)``, optional
        Analytic derivative of ``score`` in ``theta``; central differences
        are used when absent.
    dim : int or callable
        ``q``; a callable receives the number of regressor columns.
    default_init : ``"ols"``, ``"zeros"`` or callable ``(X, y, w) -> theta``
    linear_in_y : bool
        The score is affine in ``y``; conditional expectations then need
        only the first two conditional moments.
    closed_form : callable ``(X, y, w) -> theta``, optional
        Direct solver used in preference to Newton iterations.
    batch_closed_form : callable ``(X, y, W) -> (thetas, ok)``, optional
        Vectorized direct solver over the rows of a weight matrix ``W``.
    detect_separation : bool
        Diverging iterates are reported as perfect separation.
    binder : callable ``(spec, X, y) -> spec``, optional
        Resolves data-dependent defaults before fitting.
    gaussian_conditional : callable, optional
        ``(theta, X, mu, sd) -> (mean, second, jac)``: exact ``E[psi | x]``
        (n x q), ``E[psi psi' | x]`` and ``d E[psi | x] / d theta``
        (n x q x q) when ``Y | x ~ N(mu, sd^2)``.  Population oracles use it
        instead of Gauss-Hermite nodes, which converge slowly for scores
        with kinks.
    """

    name: str
    score: Callable
    objective: Callable | None = None
    score_jacobian: Callable | None = None
    dim: int | Callable[[int], int] | None = None
    default_init: str | Callable = "ols"
    linear_in_y: bool = False
    closed_form: Callable | None = None
    batch_closed_form: Callable | None = None
    detect_separation: bool = False
    binder: Callable | None = None
    params: dict = field(default_factory=dict)
    gaussian_conditional: Callable | None = None

    def dim_for(self, p: int) -> int:
        if self.dim is None:
            return p
        if callable(self.dim):
            return int(self.dim(p))
        return int(self.dim)

    def bind(self, X, y) -> "FunctionalSpec":
        if self.binder is None:
            return self
        return self.binder(self, X, y)

    def mean_score(self, theta, y, X, mass) -> np.ndarray:
        return mass @ self.score(theta, y, X)


@dataclass(frozen=True, eq=False)
class FunctionalEstimate:
    """Fitted parameter with per-case scores and the bread ``Lambda-hat``.

    ``scores`` holds the unweighted ``psi(theta_hat; y_i, x_i)``;
    ``weights`` the mean-one case weights they were averaged with.
    """

    theta_hat: np.ndarray
    scores: np.ndarray
    jacobian: np.ndarray
    converged: bool
    iterations: int
    mean_score_norm: float
    weights: np.ndarray
    spec: FunctionalSpec | None = None
    column_names: tuple[str, ...] | None = None

    @property
    def n_cases(self) -> int:
        return self.scores.shape[0]

    @property
    def dim(self) -> int:
        return self.theta_hat.shape[0]


# -- helpers -----------------------------------------------------------------


def _weighted_lstsq(X, y, w):
    """``argmin sum w_i (y_i - x_i'b)^2`` via an orthogonal decomposition."""
    if acceptability_check(Dataset(X, y, case_weights=w)) != "acceptable":
        raise CollinearRegressors("regressor matrix is (numerically) collinear")
    sw = np.sqrt(w)
    beta, *_ = np.linalg.lstsq(X * sw[:, None], y * sw, rcond=None)
    return beta


def _batch_normal_equations(X, y, W, extra=None):
    """Solve weighted normal equations for every row of ``W`` at once.

    Returns ``(thetas, ok)``; ``ok`` is False where the weighted regressors
    (stacked with the square root of ``extra``, when given) are collinear,
    i.e. their singular value ratio is under the rank tolerance.  Rows whose
    normal matrix is too ill-conditioned to decide this reliably are
    re-checked and solved one by one from the stacked design.
    """
    from .core import RANK_TOLERANCE

    n, p = X.shape
    XX = (X[:, :, None] * X[:, None, :]).reshape(n, p * p)
    A = (W @ XX).reshape(-1, p, p)
    b = W @ (X * y[:, None])
    if extra is not None:
        A = A + extra
    ev = np.linalg.eigvalsh(A)
    top = np.abs(ev).max(axis=1)
    # eigenvalues of A are squared singular values: a ratio above 1e-12 is
    # far from both the tolerance and rounding level
    fast = (top > 0) & (ev[:, 0] >= _FAST_EIG_RATIO * top)
    thetas = np.full((W.shape[0], p), np.nan)
    ok = fast.copy()
    if np.any(fast):
        thetas[fast] = np.linalg.solve(A[fast], b[fast][:, :, None])[:, :, 0]
    root = None
    if extra is not None:
        ew, ev_ = np.linalg.eigh(extra)
        root = (ev_ * np.sqrt(np.clip(ew, 0, None))).T
    for i in np.flatnonzero(~fast & (top > 0)):
        sw = np.sqrt(np.clip(W[i], 0, None))
        D, r = X * sw[:, None], y * sw
        if root is not None:
            D, r = np.vstack([D, root]), np.concatenate([r, np.zeros(p)])
        sv = np.linalg.svd(D, compute_uv=False)
        if sv[-1] >= RANK_TOLERANCE * sv[0]:
            thetas[i] = np.linalg.lstsq(D, r, rcond=None)[0]
            ok[i] = True
    return thetas, ok


_FAST_EIG_RATIO = 1e-12


def _outer_rows(X):
    return X[:, :, None] * X[:, None, :]


# -- mean functional -------------------------------------------------------------


def mean_spec() -> FunctionalSpec:
    """Location functional ``E[Y]`` with score ``y - theta``."""

    def score(theta, y, X):
        return (y - theta[0])[:, None]

    def objective(theta, y, X):
        return 0.5 * (y - theta[0]) ** 2

    def jac(theta, y, X):
        return -np.ones((y.shape[0], 1, 1))

    def closed(X, y, w):
        return np.array([np.average(y, weights=w)])

    def batch(X, y, W):
        tot = W.sum(axis=1)
        ok = tot > 0
        th = np.full((W.shape[0], 1), np.nan)
        th[ok, 0] = (W[ok] @ y) / tot[ok]
        return th, ok

    return FunctionalSpec(
        "mean", score, objective, jac, dim=1, linear_in_y=True,
        closed_form=closed, batch_closed_form=batch,
    )


# -- least squares -----------------------------------------------------------------


def _ls_score(theta, y, X):
    return X * (y - X @ theta)[:, None]


def _ls_objective(theta, y, X):
    return 0.5 * (y - X @ theta) ** 2


def _ls_jac(theta, y, X):
    return -_outer_rows(X)


def ols_spec() -> FunctionalSpec:
    """Least-squares slope functional, ``psi = x (y - x'beta)``."""

    def batch(X, y, W):
        return _batch_normal_equations(X, y, W)

    return FunctionalSpec(
        "ols", _ls_score, _ls_objective, _ls_jac, linear_in_y=True,
        closed_form=_weighted_lstsq, batch_closed_form=batch,
    )


def _check_penalty(penalty, q):
    om = np.asarray(penalty, dtype=float)
    if om.ndim == 0:
        om = float(om) * np.eye(q)
    if om.shape != (q, q):
        raise DimensionMismatch(f"penalty must be {q} x {q}")
    if not np.allclose(om, om.T, atol=1e-12):
        raise InvalidHyperparameter("penalty must be symmetric")
    if np.linalg.eigvalsh(om).min() < -1e-12 * max(1.0, np.abs(om).max()):
        raise InvalidHyperparameter("penalty must be nonnegative definite")
    return om


def ridge_spec(penalty) -> FunctionalSpec:
    """Ridge functional ``(E[XX'] + Omega)^{-1} E[XY]`` as estimating equations.

    ``penalty`` is ``Omega`` (a scalar means a multiple of the identity).
    The per-case score is ``x (y - x'b) - Omega b`` so that its mean is
    minus the gradient of ``E[(Y - X'b)^2]/2 + b'Omega b/2``.
    """
    raw = penalty

    def om(q):
        return _check_penalty(raw, q)

    def score(theta, y, X):
        return _ls_score(theta, y, X) - (om(theta.size) @ theta)[None, :]

    def objective(theta, y, X):
        return _ls_objective(theta, y, X) + 0.5 * theta @ om(theta.size) @ theta

    def jac(theta, y, X):
        return -_outer_rows(X) - om(theta.size)[None, :, :]

    def closed(X, y, w):
        return ridge_fit((X, y, w), om(X.shape[1]))

    def batch(X, y, W):
        return _batch_normal_equations(X, y, W, extra=(W.sum(axis=1)[:, None, None] * om(X.shape[1])))

    return FunctionalSpec(
        "ridge", score, objective, jac, linear_in_y=True, closed_form=closed,
        batch_closed_form=batch, params={"penalty": raw},
    )


def ols_fit(data: Dataset) -> FunctionalEstimate:
    """Weighted least squares by direct decomposition.

    Raises
    ------
    CollinearRegressors
        If the (weighted) regressor matrix fails the acceptability check.
    """
    X, y, w = data.regressors, data.response, data.weights
    beta = _weighted_lstsq(X, y, w)
    scores = _ls_score(beta, y, X)
    jac = -(X * w[:, None]).T @ X / X.shape[0]
    msn = float(np.abs(w @ scores / X.shape[0]).max())
    return FunctionalEstimate(
        beta, scores, jac, True, 0, msn, w, ols_spec(), data.column_names
    )


def ridge_fit(source, penalty) -> np.ndarray:
    """Ridge functional ``(E[XX'] + Omega)^{-1} E[X mu(X)]``.

    Parameters
    ----------
    source : Dataset, SyntheticPopulation or tuple
        Empirical moments from a dataset, population moments (by quadrature)
        from a population, or raw ``(X, y, w)`` arrays.
    penalty : array_like or float
        Symmetric nonnegative definite ``Omega``.

    Raises
    ------
    SingularSystem
        If ``E[XX'] + Omega`` is singular.
    """
    if isinstance(source, SyntheticPopulation):
        X, m = source.regressor_quadrature()
        Sxx = (X * m[:, None]).T @ X
        Sxy = (X * m[:, None]).T @ source.mean(X)
    else:
        if isinstance(source, Dataset):
            X, y, w = source.regressors, source.response, source.weights
        else:
            X, y, w = source
        w = np.asarray(w, dtype=float) / len(w)
        Sxx = (X * w[:, None]).T @ X
        Sxy = (X * w[:, None]).T @ y
    om = _check_penalty(penalty, Sxx.shape[0])
    A = Sxx + om
    s = np.linalg.svd(A, compute_uv=False)
    if s[0] == 0 or s[-1] / s[0] < 1e-14:
        raise SingularSystem("E[XX'] + Omega is singular")
    return np.linalg.solve(A, Sxy)


# -- Huber ---------------------------------------------------------------------------


def huber_rho(r, k):
    a = np.abs(r)
    return np.where(a <= k, 0.5 * r * r, k * a - 0.5 * k * k)


def _clip_moments(m, s, k):
    """First two moments of ``clip(R, -k, k)`` and ``P(|R| < k)`` for
    ``R ~ N(m, s^2)``."""
    a, b = (-k - m) / s, (k - m) / s
    Pa, Pb, pa, pb = norm.cdf(a), norm.cdf(b), norm.pdf(a), norm.pdf(b)
    inside = Pb - Pa
    first = m * inside + s * (pa - pb) + k * (norm.sf(b) - Pa)
    r2 = m * m * inside + 2 * m * s * (pa - pb) + s * s * (inside + a * pa - b * pb)
    second = r2 + k * k * (norm.sf(b) + Pa)
    return first, second, inside


def huber_spec(k: float = 1.345) -> FunctionalSpec:
    """Huber M-estimator of regression with fixed threshold ``k``."""
    if not (np.isfinite(k) and k > 0):
        raise InvalidHyperparameter("Huber threshold must be positive")
    k = float(k)

    def score(theta, y, X):
        return X * np.clip(y - X @ theta, -k, k)[:, None]

    def objective(theta, y, X):
        return huber_rho(y - X @ theta, k)

    def jac(theta, y, X):
        inside = (np.abs(y - X @ theta) <= k).astype(float)
        return -_outer_rows(X) * inside[:, None, None]

    def gaussian(theta, X, mu, sd):
        c1, c2, inside = _clip_moments(mu - X @ theta, sd, k)
        xx = _outer_rows(X)
        return X * c1[:, None], xx * c2[:, None, None], -xx * inside[:, None, None]

    return FunctionalSpec("huber", score, objective, jac, params={"k": k}, gaussian_conditional=gaussian)


# -- quantile ------------------------------------------------------------------------


def check_loss(r, tau):
    """Unsmoothed tilted absolute loss ``rho_tau``."""
    return r * (tau - (r < 0))


def _smooth_check(r, tau, eps):
    a = np.abs(r)
    if eps == 0:
        return check_loss(r, tau)
    h = np.where(a < eps, r * r / (2 * eps) + eps / 2, a)
    return (tau - 0.5) * r + 0.5 * h


def quantile_spec(tau: float = 0.5, eps: float | None = None) -> FunctionalSpec:
    """Regression quantile with a Huberized corner of half-width ``eps``.

    The loss is ``(tau - 1/2) r + H_eps(r)/2`` where ``H_eps`` replaces
    ``|r|`` by ``r^2/(2 eps) + eps/2`` on ``|r| < eps``.  With ``eps=None``
    the half-width is fixed at fit time to ``1e-4`` times the range of the
    response.
    """
    if not 0 < tau < 1:
        raise InvalidHyperparameter("quantile level must lie in (0, 1)")
    if eps is not None and not (np.isfinite(eps) and eps >= 0):
        raise InvalidHyperparameter("smoothing half-width must be nonnegative")
    tau = float(tau)

    if eps is None:
        def binder(spec, X, y):
            spread = float(np.ptp(y)) if len(y) else 0.0
            return quantile_spec(tau, 1e-4 * spread if spread > 0 else 1e-4)

        return FunctionalSpec(
            "quantile", _unbound, params={"tau": tau, "eps": None},
            binder=binder, default_init=_quantile_init(tau),
        )
    eps = float(eps)

    def score(theta, y, X):
        r = y - X @ theta
        if eps == 0:
            d = tau - (r < 0)
        else:
            d = (tau - 0.5) + 0.5 * np.clip(r / eps, -1.0, 1.0)
        return X * d[:, None]

    def objective(theta, y, X):
        return _smooth_check(y - X @ theta, tau, eps)

    def jac(theta, y, X):
        if eps == 0:
            return np.zeros((X.shape[0], X.shape[1], X.shape[1]))
        inside = (np.abs(y - X @ theta) < eps) * (0.5 / eps)
        return -_outer_rows(X) * inside[:, None, None]

    def gaussian(theta, X, mu, sd):
        m = mu - X @ theta
        if eps == 0:
            below = norm.cdf(-m / sd)
            d1 = tau - below
            d2 = (tau - 1) ** 2 * below + tau**2 * (1 - below)
            slope = norm.pdf(m / sd) / sd
        else:
            c1, c2, inside = _clip_moments(m, sd, eps)
            t = tau - 0.5
            d1 = t + c1 / (2 * eps)
            d2 = t * t + t * c1 / eps + c2 / (4 * eps * eps)
            slope = inside / (2 * eps)
        xx = _outer_rows(X)
        return X * d1[:, None], xx * d2[:, None, None], -xx * slope[:, None, None]

    return FunctionalSpec(
        "quantile", score, objective, jac, default_init=_quantile_init(tau),
        params={"tau": tau, "eps": eps}, gaussian_conditional=gaussian,
    )


def _unbound(theta, y, X):
    raise RuntimeError("quantile spec with data-dependent eps must be bound before use")


def _quantile_init(tau):
    """Pilot value from the unsmoothed linear program (scipy HiGHS)."""

    def init(X, y, w):
        from scipy import sparse
        from scipy.optimize import linprog

        n, p = X.shape
        w = np.clip(np.asarray(w, dtype=float), 0, None)
        # min sum w (tau u + (1 - tau) v)  s.t.  X b + u - v = y,  u, v >= 0
        c = np.concatenate([np.zeros(p), tau * w, (1 - tau) * w])
        eye = sparse.identity(n, format="csr")
        A = sparse.hstack([sparse.csr_matrix(X), eye, -eye], format="csr")
        bounds = [(None, None)] * p + [(0, None)] * (2 * n)
        res = linprog(c, A_eq=A, b_eq=y, bounds=bounds, method="highs")
        if res.status != 0:
            return _weighted_lstsq(X, y, w)
        return res.x[:p]

    return init


# -- logistic --------------------------------------------------------------------------


def logistic_spec() -> FunctionalSpec:
    """Bernoulli-logistic maximum-likelihood functional."""

    def score(theta, y, X):
        return X * (y - expit(X @ theta))[:, None]

    def objective(theta, y, X):
        eta = X @ theta
        return np.logaddexp(0.0, eta) - y * eta

    def jac(theta, y, X):
        p = expit(X @ theta)
        return -_outer_rows(X) * (p * (1 - p))[:, None, None]

    return FunctionalSpec(
        "logistic", score, objective, jac, default_init="zeros",
        detect_separation=True, linear_in_y=True,
    )

