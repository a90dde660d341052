"""Density power divergences, proper scoring rules and entropies.

The power family is indexed by a real ``alpha``.  Two values are
logarithmic branch points: ``alpha = 0`` (Kullback-Leibler / log score) and
``alpha = -1`` (Itakura-Saito).  Within ``1e-6`` of either point the
logarithmic formula is used.

Discrete laws are handled exactly (counting measure, finite sums); densities
on an interval are integrated with ``scipy.integrate.quad``.
"""
from __future__ import annotations

import numpy as np
from scipy import integrate
from scipy.special import expit

from .exceptions import DomainError, InvalidHyperparameter, QuadratureFailure
from .functionals import FunctionalSpec

__all__ = [
    "BRANCH_TOL",
    "phi_alpha",
    "phi_alpha_prime",
    "d_alpha",
    "bregman_pointwise",
    "DensityModel",
    "DiscreteLaw",
    "divergence_D",
    "scoring_rule_S",
    "expected_score",
    "entropy_H",
    "BregmanGenerator",
    "GaussianLinearFamily",
    "BernoulliLogisticFamily",
    "scoring_objective",
]

BRANCH_TOL = 1e-6
QUAD_TOL = 1e-8


def _branch(alpha: float) -> str:
    alpha = float(alpha)
    if abs(alpha) < BRANCH_TOL:
        return "log"
    if abs(alpha + 1) < BRANCH_TOL:
        return "inv"
    return "power"


def _positive(q, what="q"):
    q = np.asarray(q, dtype=float)
    if np.any(q <= 0):
        raise DomainError(f"{what} must be positive on this branch")
    return q


def _nonnegative(q, what="q"):
    q = np.asarray(q, dtype=float)
    if np.any(q < 0) or np.any(~np.isfinite(q)):
        raise DomainError(f"{what} must be finite and nonnegative")
    return q


def _needs_positive(alpha):
    return _branch(alpha) != "power" or alpha < 0


def phi_alpha(q, alpha: float):
    """Convex generator normalized so that ``phi(1) = phi'(1) = 0``."""
    q = _nonnegative(q)
    if _needs_positive(alpha):
        q = _positive(q)
    b = _branch(alpha)
    if b == "log":
        return q * np.log(q) - q + 1
    if b == "inv":
        return -np.log(q) + q - 1
    a = float(alpha)
    return q ** (1 + a) / (a * (1 + a)) - q / a + 1 / (1 + a)


def phi_alpha_prime(q, alpha: float):
    q = _nonnegative(q)
    if _needs_positive(alpha):
        q = _positive(q)
    b = _branch(alpha)
    if b == "log":
        return np.log(q)
    if b == "inv":
        return 1 - 1 / q
    a = float(alpha)
    return q**a / a - 1 / a


def d_alpha(p, q, alpha: float):
    """Closed-form pointwise power discrepancy ``d_alpha(p, q)``.

    At ``alpha = -1`` this is ``p/q - log(p/q) - 1``, the value implied by
    the normalized generator (so ``d(p, p) = 0``).
    """
    p = _nonnegative(p, "p")
    q = _nonnegative(q)
    b = _branch(alpha)
    if b == "log":
        q = _positive(q)
        with np.errstate(divide="ignore", invalid="ignore"):
            plog = np.where(p > 0, p * np.log(np.where(p > 0, p, 1) / q), 0.0)
        return plog + q - p
    if b == "inv":
        p, q = _positive(p, "p"), _positive(q)
        return p / q - np.log(p / q) - 1
    a = float(alpha)
    if a < 0:
        q = _positive(q)
        p = _positive(p, "p") if a < -1 else p
    return p ** (1 + a) / (a * (1 + a)) + q ** (1 + a) / (1 + a) - p * q**a / a


def bregman_pointwise(phi, phi_prime, p, q):
    """``d(p, q) = phi(p) - phi(q) - phi'(q) (p - q)``."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    return phi(p) - phi(q) - phi_prime(q) * (p - q)


# -- density models ---------------------------------------------------------------


class DensityModel:
    """Density ``q`` with respect to Lebesgue measure on ``support``.

    Parameters
    ----------
    density : callable
        Vectorized ``y -> q(y) >= 0``.
    support : (float, float)
        Integration interval; infinite endpoints allowed.
    power_integral : callable, optional
        Analytic ``alpha -> int q^(1+alpha)``.
    log_integral : float, optional
        Analytic ``int log q``.
    check : bool
        Verify ``int q = 1`` within ``1e-8`` at construction.
    """

    discrete = False

    def __init__(self, density, support=(-np.inf, np.inf), power_integral=None,
                 log_integral=None, check=True):
        self.density = density
        self.support = (float(support[0]), float(support[1]))
        self._power_integral = power_integral
        self._log_integral = log_integral
        if check:
            total = self.integrate(lambda y: self.pdf(y))
            if abs(total - 1) > QUAD_TOL:
                raise DomainError(f"density integrates to {total!r}, not 1")

    def pdf(self, y):
        return np.asarray(self.density(np.asarray(y, dtype=float)), dtype=float)

    def integrate(self, fn) -> float:
        """``int fn(y) dnu`` over the support."""
        lo, hi = self.support

        def f(t):
            v = float(fn(np.array([t]))[0])
            if not np.isfinite(v):
                raise QuadratureFailure(f"non-finite integrand at y={t}")
            return v

        val, err = integrate.quad(f, lo, hi, epsabs=QUAD_TOL * 1e-2, epsrel=1e-10, limit=400)
        if not np.isfinite(val):
            raise QuadratureFailure("non-finite integral")
        return val

    def expect(self, fn) -> float:
        return self.integrate(lambda y: fn(y) * self.pdf(y))

    def power_integral(self, alpha: float) -> float:
        if self._power_integral is not None:
            return float(self._power_integral(alpha))
        a = float(alpha)
        if a < 0:
            return self.integrate(lambda y: _positive(self.pdf(y)) ** (1 + a))
        return self.integrate(lambda y: self.pdf(y) ** (1 + a))

    def log_integral(self) -> float:
        if self._log_integral is not None:
            return float(self._log_integral)
        if not (np.isfinite(self.support[0]) and np.isfinite(self.support[1])):
            raise DomainError("int log q diverges on an unbounded support")
        return self.integrate(lambda y: np.log(_positive(self.pdf(y))))

    def same_support(self, other) -> bool:
        return not other.discrete and self.support == other.support


class DiscreteLaw(DensityModel):
    """Weighted atoms; integrals with respect to counting measure are sums."""

    discrete = True

    def __init__(self, atoms, probs):
        atoms = np.asarray(atoms, dtype=float).ravel()
        probs = _nonnegative(np.asarray(probs, dtype=float).ravel(), "probabilities")
        if atoms.shape != probs.shape:
            raise DomainError("atoms and probabilities must have equal length")
        if abs(probs.sum() - 1) > 1e-12:
            raise DomainError("probabilities must sum to one")
        self.atoms, self.probs = atoms, probs
        self.support = (float(atoms.min()), float(atoms.max()))

    def pdf(self, y):
        y = np.asarray(y, dtype=float)
        idx = np.searchsorted(self.atoms_sorted, y)
        idx = np.clip(idx, 0, len(self.atoms) - 1)
        hit = self.atoms_sorted[idx] == y
        return np.where(hit, self.probs_sorted[idx], 0.0)

    @property
    def atoms_sorted(self):
        return self.atoms[np.argsort(self.atoms)]

    @property
    def probs_sorted(self):
        return self.probs[np.argsort(self.atoms)]

    def integrate(self, fn) -> float:
        return float(np.sum(fn(self.atoms)))

    def expect(self, fn) -> float:
        mask = self.probs > 0
        return float(np.sum(self.probs[mask] * fn(self.atoms[mask])))

    def power_integral(self, alpha: float) -> float:
        a = float(alpha)
        q = _positive(self.probs) if a < 0 else self.probs
        return float(np.sum(q ** (1 + a)))

    def log_integral(self) -> float:
        return float(np.sum(np.log(_positive(self.probs))))

    def same_support(self, other) -> bool:
        return other.discrete and np.array_equal(self.atoms, other.atoms)


def divergence_D(P: DensityModel, Q: DensityModel, alpha: float) -> float:
    """Density power divergence ``int d_alpha(p, q) dnu``."""
    if not P.same_support(Q):
        raise DomainError("P and Q must share their support")
    if P.discrete:
        val = float(np.sum(d_alpha(P.probs, Q.probs, alpha)))
    else:
        val = P.integrate(lambda y: d_alpha(P.pdf(y), Q.pdf(y), alpha))
    if not np.isfinite(val):
        raise QuadratureFailure("non-finite divergence")
    return val


def scoring_rule_S(y, Q: DensityModel, alpha: float):
    """Proper scoring rule ``S_alpha(y, Q)``."""
    qy = Q.pdf(y)
    b = _branch(alpha)
    if b == "log":
        return -np.log(_positive(qy, "q(y)"))
    if b == "inv":
        return 1 / _positive(qy, "q(y)") + Q.log_integral()
    a = float(alpha)
    if a < 0:
        qy = _positive(qy, "q(y)")
    return -(qy**a) / a + Q.power_integral(a) / (1 + a)


def expected_score(P: DensityModel, Q: DensityModel, alpha: float) -> float:
    """``E_P[S_alpha(Y, Q)]``."""
    return P.expect(lambda y: scoring_rule_S(y, Q, alpha))


def entropy_H(Q: DensityModel, alpha: float) -> float:
    """Entropy ``H_alpha(Q)``, the minimum expected score up to constants."""
    b = _branch(alpha)
    if b == "log":
        if Q.discrete:
            q = Q.probs[Q.probs > 0]
            return float(-np.sum(q * np.log(q)))
        return Q.integrate(lambda y: -_xlogx(Q.pdf(y)))
    if b == "inv":
        return Q.log_integral()
    a = float(alpha)
    return -Q.power_integral(a) / (a * (1 + a))


def _xlogx(q):
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(q > 0, q * np.log(np.where(q > 0, q, 1)), 0.0)


class BregmanGenerator:
    """Bregman divergence, entropy and scoring rule from a convex ``phi``.

    ``H(Q) = -int phi(q)`` and
    ``S(y, Q) = -phi'(q(y)) + E_Q[phi'(q(Y))] + H(Q)``, so that
    ``D(P, Q) = E_P[S(Y, Q)] - H(P)`` holds exactly.
    """

    def __init__(self, phi, phi_prime):
        self.phi, self.phi_prime = phi, phi_prime

    def d(self, p, q):
        return bregman_pointwise(self.phi, self.phi_prime, p, q)

    def divergence(self, P, Q):
        if not P.same_support(Q):
            raise DomainError("P and Q must share their support")
        if P.discrete:
            return float(np.sum(self.d(P.probs, Q.probs)))
        return P.integrate(lambda y: self.d(P.pdf(y), Q.pdf(y)))

    def entropy(self, Q):
        if Q.discrete:
            return -float(np.sum(self.phi(Q.probs)))
        return -Q.integrate(lambda y: self.phi(Q.pdf(y)))

    def score(self, y, Q):
        tangent = Q.expect(lambda t: self.phi_prime(Q.pdf(t)))
        return -self.phi_prime(Q.pdf(y)) + tangent + self.entropy(Q)

    def expected_score(self, P, Q):
        return P.expect(lambda y: self.score(y, Q))

    @classmethod
    def power(cls, alpha):
        return cls(lambda q: phi_alpha(q, alpha), lambda q: phi_alpha_prime(q, alpha))


# -- regression scoring families ------------------------------------------------------


class GaussianLinearFamily:
    """``Y | x ~ N(x'beta, sigma^2)`` with ``theta = (beta, log sigma)``."""

    name = "gaussian"

    @staticmethod
    def dim(p):
        return p + 1

    @staticmethod
    def split(theta):
        return theta[:-1], theta[-1]

    def log_density(self, theta, y, X):
        beta, s = self.split(theta)
        r = y - X @ beta
        return -0.5 * np.log(2 * np.pi) - s - 0.5 * r * r * np.exp(-2 * s)

    def grad_log_density(self, theta, y, X):
        beta, s = self.split(theta)
        r = y - X @ beta
        iv = np.exp(-2 * s)
        return np.column_stack([X * (r * iv)[:, None], r * r * iv - 1])

    def power_integral(self, theta, X, alpha):
        if alpha <= -1:
            raise DomainError("int q^(1+alpha) diverges for the normal family when alpha <= -1")
        s = theta[-1]
        val = (2 * np.pi) ** (-alpha / 2) * np.exp(-alpha * s) / np.sqrt(1 + alpha)
        return np.full(X.shape[0], val)

    def grad_power_integral(self, theta, X, alpha):
        g = np.zeros((X.shape[0], theta.size))
        g[:, -1] = -alpha * self.power_integral(theta, X, alpha)
        return g

    def log_integral(self, theta, X):
        raise DomainError("int log q diverges for the normal family")

    grad_log_integral = log_integral

    def init(self, X, y, w):
        sw = np.sqrt(w)
        beta, *_ = np.linalg.lstsq(X * sw[:, None], y * sw, rcond=None)
        r = y - X @ beta
        sd = np.sqrt(np.average(r * r, weights=w))
        return np.append(beta, np.log(sd if sd > 0 else 1.0))

    def predict(self, theta, X):
        return X @ theta[:-1]


class BernoulliLogisticFamily:
    """``P(Y = 1 | x) = expit(x'theta)``; counting measure on ``{0, 1}``."""

    name = "bernoulli"

    @staticmethod
    def dim(p):
        return p

    def log_density(self, theta, y, X):
        eta = X @ theta
        return y * eta - np.logaddexp(0.0, eta)

    def grad_log_density(self, theta, y, X):
        return X * (y - expit(X @ theta))[:, None]

    def power_integral(self, theta, X, alpha):
        p = expit(X @ theta)
        return p ** (1 + alpha) + (1 - p) ** (1 + alpha)

    def grad_power_integral(self, theta, X, alpha):
        p = expit(X @ theta)
        d = (1 + alpha) * (p**alpha - (1 - p) ** alpha) * p * (1 - p)
        return X * d[:, None]

    def log_integral(self, theta, X):
        eta = X @ theta
        return -np.logaddexp(0.0, eta) - np.logaddexp(0.0, -eta)

    def grad_log_integral(self, theta, X):
        return X * (1 - 2 * expit(X @ theta))[:, None]

    def init(self, X, y, w):
        return np.zeros(X.shape[1])

    def predict(self, theta, X):
        return expit(X @ theta)


def scoring_objective(family, alpha: float) -> FunctionalSpec:
    """Regression functional minimizing ``E[S_alpha(Y, Q(.|X; theta))]``.

    ``alpha = 0`` gives the maximum-likelihood functional of ``family``.
    The score is the analytic negative gradient of the objective.
    """
    if not np.isfinite(alpha):
        raise InvalidHyperparameter("alpha must be finite")
    b = _branch(alpha)
    a = float(alpha)

    if b == "log":
        def objective(theta, y, X):
            return -family.log_density(theta, y, X)

        def grad(theta, y, X):
            return -family.grad_log_density(theta, y, X)
    elif b == "inv":
        def objective(theta, y, X):
            return np.exp(-family.log_density(theta, y, X)) + family.log_integral(theta, X)

        def grad(theta, y, X):
            inv_q = np.exp(-family.log_density(theta, y, X))
            return -inv_q[:, None] * family.grad_log_density(theta, y, X) + family.grad_log_integral(theta, X)
    else:
        def objective(theta, y, X):
            qa = np.exp(a * family.log_density(theta, y, X))
            return -qa / a + family.power_integral(theta, X, a) / (1 + a)

        def grad(theta, y, X):
            qa = np.exp(a * family.log_density(theta, y, X))
            return (-qa[:, None] * family.grad_log_density(theta, y, X)
                    + family.grad_power_integral(theta, X, a) / (1 + a))

    def score(theta, y, X):
        return -grad(theta, y, X)

    return FunctionalSpec(
        f"score-power[{family.name},alpha={a:g}]", score, objective, None,
        dim=family.dim, default_init=family.init,
        params={"alpha": a, "family": family},
    )
