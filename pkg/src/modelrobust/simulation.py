"""Built-in synthetic populations and the Monte Carlo CLT harness."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from ._parallel import parallel_map
from .core import NoiseLaw, NormalLaw, SeededStream, SyntheticPopulation, UniformLaw
from .estimating_equations import SolverConfig, fit_functional
from .exceptions import ExcessiveFailures, ModelRobustError, UnknownPopulation
from .functionals import FunctionalSpec
from .inference import (
    _bound,
    _conditional_moments,
    _inv_bread,
    conditional_parameter,
    population_parameter,
    variance_decomposition,
)

__all__ = [
    "BUILTIN_POPULATIONS",
    "builtin_population",
    "CltReport",
    "EoDraws",
    "eo_sampler",
    "clt_check",
]

BUILTIN_POPULATIONS = (
    "linear-homo",
    "linear-hetero",
    "quadratic",
    "sine",
    "deterministic-quadratic",
    "logistic-true",
    "logistic-misspec",
)

_DEFAULTS = {
    "linear-homo": {"beta0": (1.0, 2.0), "sigma": 1.0},
    "linear-hetero": {"beta0": (1.0, 2.0), "sigma": 1.0},
    "quadratic": {"sigma": 0.5},
    "sine": {"sigma": 0.5},
    "deterministic-quadratic": {},
    "logistic-true": {"theta0": (-0.5, 1.0)},
    "logistic-misspec": {"theta0": (-0.5, 1.0), "curvature": 1.0},
}


def builtin_population(name: str, params: dict | None = None, **kw) -> SyntheticPopulation:
    """Named scenario with all oracles attached.

    ==========================  ==========  =====================================
    name                        X law       response
    ==========================  ==========  =====================================
    linear-homo                 U(0, 1)     b0 + b1 x + N(0, sigma^2)
    linear-hetero               U(0, 1)     b0 + b1 x + N(0, (sigma (0.25 + x))^2)
    quadratic                   U(0, 1)     x^2 + N(0, sigma^2)
    sine                        U(0, 1)     sin(2 pi x) + N(0, sigma^2)
    deterministic-quadratic     U(0, 1)     x^2
    logistic-true               N(0, 1)     Bernoulli(expit(t0 + t1 x))
    logistic-misspec            N(0, 1)     Bernoulli(expit(t0 + t1 x + c x^2))
    ==========================  ==========  =====================================

    Common params: ``intercept`` (default True), ``low``/``high`` for the
    uniform law.  Linear scenarios take ``beta0`` with an intercept entry
    only when ``intercept`` is True.
    """
    if name not in _DEFAULTS:
        raise UnknownPopulation(f"unknown population {name!r}; choose from {', '.join(BUILTIN_POPULATIONS)}")
    p = dict(_DEFAULTS[name])
    p.update(params or {})
    p.update(kw)
    intercept = bool(p.pop("intercept", True))
    low, high = float(p.pop("low", 0.0)), float(p.pop("high", 1.0))
    law = UniformLaw(low, high)

    if name in ("linear-homo", "linear-hetero"):
        beta0 = np.asarray(p["beta0"], dtype=float)
        if not intercept and beta0.size == 2 and "beta0" not in (params or {}) and "beta0" not in kw:
            beta0 = beta0[1:]
        a, b = (beta0[0], beta0[1]) if intercept else (0.0, beta0[0])
        sigma = float(p["sigma"])

        def mean(Z, a=a, b=b):
            return a + b * Z[:, 0]
        if name == "linear-homo":
            noise = NoiseLaw("gaussian", sigma)
        else:
            noise = NoiseLaw("gaussian", lambda Z, s=sigma: s * (0.25 + np.abs(Z[:, 0])))
    elif name in ("quadratic", "deterministic-quadratic"):
        def mean(Z):
            return Z[:, 0] ** 2
        noise = NoiseLaw("gaussian", float(p["sigma"])) if name == "quadratic" else NoiseLaw("zero")
    elif name == "sine":
        def mean(Z):
            return np.sin(2 * np.pi * Z[:, 0])
        noise = NoiseLaw("gaussian", float(p["sigma"]))
    else:
        law = NormalLaw(float(p.pop("mean", 0.0)), float(p.pop("sd", 1.0)))
        t0, t1 = np.asarray(p["theta0"], dtype=float)
        c = float(p.get("curvature", 0.0)) if name == "logistic-misspec" else 0.0

        def mean(Z, t0=t0, t1=t1, c=c):
            return expit(t0 + t1 * Z[:, 0] + c * Z[:, 0] ** 2)
        noise = NoiseLaw("bernoulli")
    return SyntheticPopulation(law, mean, noise, 1, intercept, name, dict(p, intercept=intercept))


# -- Monte Carlo harness ---------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class EoDraws:
    """Raw estimation offsets, ``eos[r, k]`` for k = total, noise, approx.

    ``ic_residual[r, k]`` is the norm of the offset minus its influence
    function approximation (mean of ``IC(Y_i, X_i)``,
    ``IC(Y_i, X_i) - IC(X_i)`` and ``IC(X_i)`` respectively).
    """

    eos: np.ndarray
    ic_residual: np.ndarray
    theta_P: np.ndarray
    failures: int
    N: int


def _replicate(spec, pop, N, stream, cfg, theta_P, binv):
    d = pop.sample(N, stream)
    th = fit_functional(spec, d, cfg).theta_hat
    tx = conditional_parameter(spec, d.regressors, pop, cfg, theta0=th)
    total, noise, approx = th - theta_P, th - tx, tx - theta_P
    # influence-function approximations at the population parameter
    psi = spec.bind(d.regressors, d.response).score(theta_P, d.response, d.regressors)
    ic = -psi @ binv.T
    cpsi, _ = _conditional_moments(_bound(spec, pop), pop, theta_P, d.regressors)
    icx = -cpsi @ binv.T
    pred = np.stack([ic.mean(0), (ic - icx).mean(0), icx.mean(0)])
    eos = np.stack([noise + approx, noise, approx])
    return eos, np.linalg.norm(eos - pred, axis=1)


def eo_sampler(pop: SyntheticPopulation, spec: FunctionalSpec, N: int, R: int, stream: SeededStream,
               cfg: SolverConfig | None = None, max_fail: float = 0.01,
               threads: int | None = None) -> EoDraws:
    """``R`` independent datasets of size ``N``; offsets for each.

    Replicate ``r`` draws from ``stream.child(r)``.  ``theta(P)`` comes from
    population quadrature, not from a large sample.
    """
    cfg = cfg or SolverConfig()
    theta_P = population_parameter(spec, pop)
    binv = _inv_bread(variance_decomposition(spec, pop, theta_P).bread)

    def one(r):
        try:
            return _replicate(spec, pop, N, stream.child(r), cfg, theta_P, binv)
        except ModelRobustError:
            return None

    res = parallel_map(one, range(R), threads)
    good = [r for r in res if r is not None]
    failures = R - len(good)
    if not good or failures / R > max_fail:
        raise ExcessiveFailures(f"{failures} of {R} replicates failed to fit")
    return EoDraws(np.stack([g[0] for g in good]), np.stack([g[1] for g in good]), theta_P, failures, N)


@dataclass(frozen=True, eq=False)
class CltReport:
    """Empirical versus oracle variances of the root-N scaled offsets."""

    N: int
    R: int
    emp_var_total: np.ndarray
    emp_var_noise: np.ndarray
    emp_var_approx: np.ndarray
    emp_cross_cov: np.ndarray
    theo_total: np.ndarray
    theo_noise: np.ndarray
    theo_approx: np.ndarray
    rel_err: np.ndarray
    cross_corr: np.ndarray
    theta_P: np.ndarray
    failures: int = 0

    def records(self) -> list[dict]:
        out = []
        q = self.theta_P.size
        for kind, emp, theo, err in zip(
            ("total", "noise", "approx"),
            (self.emp_var_total, self.emp_var_noise, self.emp_var_approx),
            (self.theo_total, self.theo_noise, self.theo_approx),
            self.rel_err,
        ):
            for a in range(q):
                for b in range(q):
                    out.append({"component": kind, "row": a, "col": b, "empirical": emp[a, b],
                                "theoretical": theo[a, b], "rel_err": err})
        return out


def _cov(a, b):
    da, db = a - a.mean(0), b - b.mean(0)
    return da.T @ db / a.shape[0]


_ZERO_FLOOR = 1e-8


def _rel(emp, theo, total):
    """Frobenius-relative error.

    The denominator is floored at ``1e-8 * ||total||`` so that an oracle that
    vanishes up to rounding (e.g. the approximation part of a well-specified
    model) is judged on an absolute scale instead of a ratio of rounding errors.
    """
    den = max(np.linalg.norm(theo), _ZERO_FLOOR * np.linalg.norm(total))
    return float(np.linalg.norm(emp - theo) / den) if den > 0 else float(np.linalg.norm(emp - theo))


def clt_check(pop: SyntheticPopulation, spec: FunctionalSpec, N: int = 500, R: int = 2000,
              stream: SeededStream = SeededStream(), cfg: SolverConfig | None = None,
              threads: int | None = None) -> CltReport:
    """Monte Carlo check of the three offset CLTs against the sandwich oracles.

    Raises
    ------
    ExcessiveFailures
        If more than 1% of the replicates fail to fit.
    """
    draws = eo_sampler(pop, spec, N, R, stream, cfg, threads=threads)
    rep = variance_decomposition(spec, pop, draws.theta_P)
    s = np.sqrt(N) * draws.eos
    tot, noi, app = s[:, 0], s[:, 1], s[:, 2]
    ev_t, ev_n, ev_a = _cov(tot, tot), _cov(noi, noi), _cov(app, app)
    cross = _cov(noi, app)
    # components whose spread is rounding noise have no defined correlation
    floor = _ZERO_FLOOR * np.sqrt(np.diag(ev_t))
    sd_n, sd_a = np.sqrt(np.diag(ev_n)), np.sqrt(np.diag(ev_a))
    sd_n, sd_a = np.where(sd_n > floor, sd_n, np.nan), np.where(sd_a > floor, sd_a, np.nan)
    corr = cross / np.outer(sd_n, sd_a)
    tt = rep.av_total
    rel = np.array([_rel(ev_t, tt, tt), _rel(ev_n, rep.av_noise, tt), _rel(ev_a, rep.av_approx, tt)])
    return CltReport(N, draws.eos.shape[0], ev_t, ev_n, ev_a, cross, rep.av_total, rep.av_noise,
                     rep.av_approx, rel, corr, draws.theta_P, draws.failures)
