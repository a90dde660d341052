"""Newton-type solver for ``E_N[psi(theta)] = 0`` and the bread Jacobian.

The solver works on *masses*: a vector ``m`` of case masses summing to one
(possibly signed, which the influence-function finite differences need).
A :class:`~modelrobust.core.Dataset` with mean-one weights ``w`` has masses
``w / N``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Dataset
from .exceptions import (
    InvalidHyperparameter,
    NoConvergence,
    NonFiniteScore,
    PerfectSeparation,
    SingularJacobian,
)
from .functionals import FunctionalEstimate, FunctionalSpec

__all__ = [
    "SolverConfig",
    "ee_solve",
    "fit_functional",
    "bread_jacobian",
    "solve_masses",
    "mean_jacobian",
]

_SEPARATION_NORM = 1e6
# mean log-loss this small means every case is fitted with probability ~1
_SEPARATION_LOSS = 1e-6
_MAX_HALVINGS = 30
_MAX_LM_TRIES = 40


@dataclass(frozen=True)
class SolverConfig:
    """Solver controls.

    tol
        Stopping threshold on ``max |mean score|``.
    init
        ``None`` for the spec's default strategy, a strategy tag
        (``"ols"``/``"zeros"``) or an explicit starting vector.
    jacobian_mode
        ``"analytic"`` (falls back to differences when the spec has no
        analytic Jacobian) or ``"central-difference"``.
    fd_step
        Relative step for central differences; the absolute step is
        ``max(fd_step, fd_step * ||theta||)``.
    damping
        Scale applied to each full Newton step, in ``(0, 1]``.
    """

    tol: float = 1e-10
    max_iter: int = 100
    init: object = None
    jacobian_mode: str = "analytic"
    fd_step: float = 1e-6
    damping: float = 1.0

    def __post_init__(self):
        if not self.tol > 0:
            raise InvalidHyperparameter("tol must be positive")
        if self.max_iter < 1:
            raise InvalidHyperparameter("max_iter must be at least 1")
        if not 0 < self.damping <= 1:
            raise InvalidHyperparameter("damping must lie in (0, 1]")
        if self.jacobian_mode not in ("analytic", "central-difference"):
            raise InvalidHyperparameter(f"unknown jacobian_mode {self.jacobian_mode!r}")


def _fd_step(theta, rel):
    return max(rel, rel * float(np.linalg.norm(theta)))


def mean_jacobian(spec: FunctionalSpec, theta, y, X, mass, mode="analytic", fd_step=1e-6):
    """``grad_theta sum_i m_i psi(theta; y_i, x_i)`` as a ``q x q`` matrix."""
    theta = np.asarray(theta, dtype=float)
    if mode == "analytic" and spec.score_jacobian is not None:
        J = np.tensordot(mass, spec.score_jacobian(theta, y, X), axes=(0, 0))
    else:
        h = _fd_step(theta, fd_step)
        q = theta.size
        J = np.empty((q, q))
        for k in range(q):
            e = np.zeros(q)
            e[k] = h
            J[:, k] = (mass @ spec.score(theta + e, y, X) - mass @ spec.score(theta - e, y, X)) / (2 * h)
    if not np.all(np.isfinite(J)):
        raise NonFiniteScore("non-finite score Jacobian")
    return J


def _initial(spec, X, y, mass, cfg):
    q = spec.dim_for(X.shape[1])
    init = cfg.init if cfg.init is not None else spec.default_init
    if callable(init):
        w = np.clip(mass, 0, None)
        theta0 = np.asarray(init(X, y, w * len(w) / w.sum()), dtype=float)
    elif isinstance(init, str):
        if init == "zeros":
            theta0 = np.zeros(q)
        elif init == "ols":
            w = np.clip(mass, 0, None)
            sw = np.sqrt(w)
            theta0, *_ = np.linalg.lstsq(X * sw[:, None], y * sw, rcond=None)
            if theta0.size != q:
                theta0 = np.zeros(q)
        else:
            raise InvalidHyperparameter(f"unknown init strategy {init!r}")
    else:
        theta0 = np.asarray(init, dtype=float).ravel()
    if theta0.size != q or not np.all(np.isfinite(theta0)):
        raise InvalidHyperparameter("initial value must be a finite vector of length q")
    return theta0


def solve_masses(spec: FunctionalSpec, X, y, mass, cfg: SolverConfig | None = None, theta0=None):
    """Solve ``sum_i m_i psi(theta; y_i, x_i) = 0``.

    Damped Newton with step halving on a merit function (the mean objective
    when the spec has one, else half the squared mean-score norm), with a
    Levenberg-type fallback ``-(J - lam I)^{-1} g`` when the Newton direction
    cannot reduce the merit or the Jacobian is singular.

    Returns
    -------
    theta, iterations, mean_score
    """
    cfg = cfg or SolverConfig()
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    mass = np.asarray(mass, dtype=float)
    theta = _initial(spec, X, y, mass, cfg) if theta0 is None else np.asarray(theta0, dtype=float)

    def gbar(t):
        g = mass @ spec.score(t, y, X)
        if not np.all(np.isfinite(g)):
            raise NonFiniteScore("non-finite mean score")
        return g

    if spec.objective is not None:
        def merit(t, g):
            return float(mass @ spec.objective(t, y, X))
    else:
        def merit(t, g):
            return 0.5 * float(g @ g)

    def check_divergence(t):
        if spec.detect_separation and np.linalg.norm(t) > _SEPARATION_NORM:
            raise PerfectSeparation("iterates diverge; the classes appear separated")

    g = gbar(theta)
    f = merit(theta, g)
    q = theta.size
    lam = 0.0
    for it in range(cfg.max_iter + 1):
        if np.abs(g).max() <= cfg.tol:
            if spec.detect_separation and spec.objective is not None and f < _SEPARATION_LOSS:
                raise PerfectSeparation("objective driven to zero; the classes appear separated")
            return theta, it, g
        if it == cfg.max_iter:
            break
        J = mean_jacobian(spec, theta, y, X, mass, cfg.jacobian_mode, cfg.fd_step)
        scale = max(np.abs(J).max(), 1e-12)

        def accept(t_new):
            g_new = gbar(t_new)
            f_new = merit(t_new, g_new)
            if not np.isfinite(f_new):
                return None
            if f_new < f or (f_new <= f + 1e-13 * abs(f) and np.abs(g_new).max() < np.abs(g).max()):
                return g_new, f_new
            return None

        step_taken = None
        if lam == 0.0:
            try:
                step = -np.linalg.solve(J, g)
            except np.linalg.LinAlgError:
                step = None
            if step is not None and np.all(np.isfinite(step)) and np.linalg.cond(J) < 1e13:
                a = cfg.damping
                for _ in range(_MAX_HALVINGS + 1):
                    t_new = theta + a * step
                    check_divergence(t_new)
                    res = accept(t_new)
                    if res is not None:
                        step_taken = (t_new, *res)
                        break
                    a /= 2
            if step_taken is None:
                lam = 1e-4 * scale
        if step_taken is None:
            for _ in range(_MAX_LM_TRIES):
                try:
                    step = -np.linalg.solve(J - lam * np.eye(q), g)
                except np.linalg.LinAlgError:
                    lam *= 10
                    continue
                t_new = theta + cfg.damping * step
                check_divergence(t_new)
                res = accept(t_new)
                if res is not None:
                    step_taken = (t_new, *res)
                    lam = lam / 10 if lam > 1e-10 * scale else 0.0
                    break
                lam *= 10
            else:
                if np.linalg.matrix_rank(J) < q:
                    raise SingularJacobian("singular Jacobian and no descent step found")
                break
        theta, g, f = step_taken
    if spec.detect_separation and spec.objective is not None and f < _SEPARATION_LOSS:
        raise PerfectSeparation("objective driven to zero; the classes appear separated")
    raise NoConvergence(
        f"no convergence in {cfg.max_iter} iterations (max |mean score| = {np.abs(g).max():.3g})"
    )


def _estimate(spec, data, theta, iterations, g, cfg, converged=True):
    X, y, w = data.regressors, data.response, data.weights
    mass = w / data.n_cases
    J = mean_jacobian(spec, theta, y, X, mass, cfg.jacobian_mode, cfg.fd_step)
    return FunctionalEstimate(
        np.asarray(theta, dtype=float), spec.score(theta, y, X), J, converged,
        iterations, float(np.abs(g).max()), w, spec, data.column_names,
    )


def ee_solve(spec: FunctionalSpec, data: Dataset, cfg: SolverConfig | None = None) -> FunctionalEstimate:
    """Fit ``spec`` to ``data`` by the damped Newton solver.

    Raises
    ------
    NoConvergence, SingularJacobian, PerfectSeparation, NonFiniteScore
    """
    cfg = cfg or SolverConfig()
    spec = spec.bind(data.regressors, data.response)
    mass = data.weights / data.n_cases
    theta, it, g = solve_masses(spec, data.regressors, data.response, mass, cfg)
    return _estimate(spec, data, theta, it, g, cfg)


def fit_functional(spec: FunctionalSpec, data: Dataset, cfg: SolverConfig | None = None) -> FunctionalEstimate:
    """Fit by the spec's closed form when it has one, else by :func:`ee_solve`."""
    cfg = cfg or SolverConfig()
    spec = spec.bind(data.regressors, data.response)
    if spec.closed_form is None:
        return ee_solve(spec, data, cfg)
    X, y, w = data.regressors, data.response, data.weights
    theta = np.asarray(spec.closed_form(X, y, w), dtype=float)
    g = (w / data.n_cases) @ spec.score(theta, y, X)
    return _estimate(spec, data, theta, 0, g, cfg)


def bread_jacobian(spec: FunctionalSpec, data: Dataset, theta, cfg: SolverConfig | None = None) -> np.ndarray:
    """``Lambda-hat = grad_theta E_N[w psi(theta)]``.

    Analytic when the spec supplies a Jacobian and ``cfg.jacobian_mode`` is
    ``"analytic"``, central differences otherwise.
    """
    cfg = cfg or SolverConfig()
    theta = np.asarray(theta, dtype=float)
    if not np.all(np.isfinite(theta)):
        raise NonFiniteScore("theta must be finite")
    spec = spec.bind(data.regressors, data.response)
    mass = data.weights / data.n_cases
    return mean_jacobian(spec, theta, data.response, data.regressors, mass, cfg.jacobian_mode, cfg.fd_step)
