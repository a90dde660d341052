"""Functional construction from names and ``key=value`` hyperparameters."""
from __future__ import annotations

import numpy as np
from scipy.special import expit

from .estimating_equations import SolverConfig
from .exceptions import InvalidHyperparameter
from .functionals import (
    FunctionalSpec,
    huber_spec,
    logistic_spec,
    mean_spec,
    ols_spec,
    quantile_spec,
    ridge_spec,
)
from .scoring import BernoulliLogisticFamily, GaussianLinearFamily, scoring_objective

__all__ = ["FUNCTIONALS", "make_functional", "split_hyperparams", "parameter_names", "predict"]

FUNCTIONALS = ("ols", "ridge", "huber", "quantile", "logistic", "score-power", "mean")

_ALLOWED = {
    "ols": {},
    "mean": {},
    "logistic": {},
    "ridge": {"penalty": 1.0},
    "huber": {"k": 1.345},
    "quantile": {"tau": 0.5, "eps": None},
    "score-power": {"alpha": 0.0, "family": "gaussian"},
}
_SOLVER_KEYS = {"tol": float, "max_iter": int, "jacobian_mode": str, "fd_step": float, "damping": float}
_FAMILIES = {"gaussian": GaussianLinearFamily, "bernoulli": BernoulliLogisticFamily}


def _number(key, value):
    if value is None or isinstance(value, (int, float, np.floating, np.integer)):
        return value
    try:
        return float(value)
    except ValueError:
        raise InvalidHyperparameter(f"{key} must be a number, got {value!r}") from None


def split_hyperparams(name: str, hyper: dict | None):
    """Separate functional hyperparameters from solver settings.

    Returns ``(functional_params, SolverConfig)``; unknown keys raise.
    """
    if name not in _ALLOWED:
        raise InvalidHyperparameter(f"unknown functional {name!r}; choose from {', '.join(FUNCTIONALS)}")
    fpar, spar = dict(_ALLOWED[name]), {}
    for key, value in (hyper or {}).items():
        if key in _SOLVER_KEYS:
            spar[key] = _SOLVER_KEYS[key](value)
        elif key in fpar:
            fpar[key] = value if key == "family" else _number(key, value)
        else:
            raise InvalidHyperparameter(f"functional {name!r} takes no hyperparameter {key!r}")
    return fpar, SolverConfig(**spar)


def make_functional(name: str, hyper: dict | None = None) -> FunctionalSpec:
    """Build a FunctionalSpec by name, validating its hyperparameters."""
    p, _ = split_hyperparams(name, hyper)
    if name == "ols":
        return ols_spec()
    if name == "mean":
        return mean_spec()
    if name == "logistic":
        return logistic_spec()
    if name == "ridge":
        return ridge_spec(p["penalty"])
    if name == "huber":
        if not p["k"] > 0:
            raise InvalidHyperparameter("huber k must be positive")
        return huber_spec(p["k"])
    if name == "quantile":
        return quantile_spec(p["tau"], p["eps"])
    fam = _FAMILIES.get(p["family"])
    if fam is None:
        raise InvalidHyperparameter(f"unknown family {p['family']!r}; choose gaussian or bernoulli")
    return scoring_objective(fam(), p["alpha"])


def parameter_names(spec: FunctionalSpec, column_names) -> tuple[str, ...]:
    """Names of the components of ``theta`` for a design with these columns."""
    cols = tuple(column_names)
    q = spec.dim_for(len(cols))
    if q == len(cols):
        return cols
    if spec.name == "mean":
        return ("mean",)
    if q == len(cols) + 1:
        return cols + ("log_sigma",)
    return tuple(f"theta{i}" for i in range(q))


def predict(spec: FunctionalSpec, theta, X) -> np.ndarray:
    """Fitted conditional mean of ``Y`` at design rows ``X``."""
    X = np.asarray(X, dtype=float)
    theta = np.asarray(theta, dtype=float)
    fam = spec.params.get("family")
    if fam is not None:
        return fam.predict(theta, X)
    if spec.name == "mean":
        return np.full(X.shape[0], theta[0])
    if spec.name == "logistic":
        return expit(X @ theta)
    return X @ theta
