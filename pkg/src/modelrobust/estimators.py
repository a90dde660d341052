"""scikit-learn style wrappers around the functional machinery.

These accept plain ``(X, y)`` arrays, add an intercept column when asked,
and expose the sandwich standard errors next to the coefficients.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .core import Dataset, SeededStream
from .diagnostics import _kernel, reweighting_diagnostic
from .estimating_equations import fit_functional
from .exceptions import DegenerateRegressor, DimensionMismatch
from .inference import sandwich_variance
from .registry import make_functional, parameter_names, predict, split_hyperparams

__all__ = ["ModelRobustRegressor", "ReweightingDiagnostic", "design_matrix"]

_HYPER = {
    "ridge": ("penalty",),
    "huber": ("k",),
    "quantile": ("tau",),
    "score-power": ("alpha", "family"),
}


def design_matrix(X, fit_intercept: bool = True, feature_names=None):
    """Prepend a column of ones when ``fit_intercept``; returns ``(X, names)``."""
    X = np.asarray(X, dtype=float)
    names = list(feature_names) if feature_names is not None else [f"x{j + 1}" for j in range(X.shape[1])]
    if fit_intercept:
        return np.column_stack([np.ones(X.shape[0]), X]), tuple(["intercept"] + names)
    return X, tuple(names)


class _FunctionalMixin:
    def _spec(self):
        hyper = {k: getattr(self, k) for k in _HYPER.get(self.functional, ())}
        hyper.update(tol=self.tol, max_iter=self.max_iter)
        _, cfg = split_hyperparams(self.functional, hyper)
        return make_functional(self.functional, hyper), cfg

    def _dataset(self, X, y, sample_weight):
        names = getattr(X, "columns", None)
        names = None if names is None else [str(c) for c in names]
        X, y = check_X_y(X, y, dtype=float, y_numeric=True)
        D, cols = design_matrix(X, self.fit_intercept, names)
        return Dataset(D, y, cols, sample_weight)


class ModelRobustRegressor(_FunctionalMixin, RegressorMixin, BaseEstimator):
    """Fit a regression functional and its model-robust sandwich covariance.

    Parameters
    ----------
    functional : {"ols", "ridge", "huber", "quantile", "logistic", "score-power"}
    fit_intercept : bool
    penalty, k, tau, alpha, family
        Hyperparameters, used only by the functional they belong to.
    tol, max_iter : solver settings.
    hc1 : bool
        Apply the ``N/(N-q)`` small-sample factor to the sandwich.

    Attributes
    ----------
    theta_ : full parameter vector (intercept first when fitted).
    coef_, intercept_ : the regressor part and the intercept.
    covariance_ : sandwich covariance of ``theta_`` (already divided by N).
    se_ : square roots of its diagonal.
    """

    def __init__(self, functional="ols", fit_intercept=True, penalty=1.0, k=1.345, tau=0.5,
                 alpha=0.0, family="gaussian", tol=1e-10, max_iter=100, hc1=False):
        self.functional = functional
        self.fit_intercept = fit_intercept
        self.penalty = penalty
        self.k = k
        self.tau = tau
        self.alpha = alpha
        self.family = family
        self.tol = tol
        self.max_iter = max_iter
        self.hc1 = hc1

    def fit(self, X, y, sample_weight=None):
        data = self._dataset(X, y, sample_weight)
        spec, cfg = self._spec()
        est = fit_functional(spec, data, cfg)
        rep = sandwich_variance(est, hc1=self.hc1)
        self.spec_ = spec
        self.estimate_ = est
        self.theta_ = est.theta_hat
        self.parameter_names_ = parameter_names(spec, data.column_names)
        self.covariance_ = rep.av_total / data.n_cases
        self.se_ = np.sqrt(np.clip(np.diag(self.covariance_), 0, None))
        p = data.n_regressors
        start = 1 if self.fit_intercept else 0
        self.intercept_ = float(self.theta_[0]) if self.fit_intercept else 0.0
        self.coef_ = self.theta_[start:p]
        self.n_features_in_ = p - start
        self.converged_ = est.converged
        return self

    def predict(self, X):
        check_is_fitted(self, "theta_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise DimensionMismatch(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        D, _ = design_matrix(X, self.fit_intercept)
        return predict(self.spec_, self.theta_, D)


class ReweightingDiagnostic(_FunctionalMixin, TransformerMixin, BaseEstimator):
    """Localized fits under Gaussian reweighting of one feature.

    ``feature`` indexes the columns of ``X`` (not counting the intercept).
    After ``fit``, ``trace_`` holds the full diagnostic trace and
    ``transform(X)`` returns the mean-one kernel weights of each row of
    ``X`` at every fitted center (``n x K``).
    """

    def __init__(self, functional="ols", feature=0, bandwidth=1.0, grid="deciles", B=200, seed=0,
                 fit_intercept=True, penalty=1.0, k=1.345, tau=0.5, alpha=0.0, family="gaussian",
                 tol=1e-10, max_iter=100, threads=None):
        self.functional = functional
        self.feature = feature
        self.bandwidth = bandwidth
        self.grid = grid
        self.B = B
        self.seed = seed
        self.fit_intercept = fit_intercept
        self.penalty = penalty
        self.k = k
        self.tau = tau
        self.alpha = alpha
        self.family = family
        self.tol = tol
        self.max_iter = max_iter
        self.threads = threads

    def fit(self, X, y, sample_weight=None):
        data = self._dataset(X, y, sample_weight)
        spec, cfg = self._spec()
        j = int(self.feature) + (1 if self.fit_intercept else 0)
        self.trace_ = reweighting_diagnostic(
            data, spec, j, self.grid, self.bandwidth, self.B, SeededStream(int(self.seed)),
            cfg, threads=self.threads,
        )
        x = data.regressors[:, j]
        m = np.average(x, weights=data.weights)
        self.scale_ = self.bandwidth * float(np.sqrt(np.average((x - m) ** 2, weights=data.weights)))
        self.centers_ = self.trace_.centers
        self.estimates_ = self.trace_.theta_at_center
        self.n_features_in_ = data.n_regressors - (1 if self.fit_intercept else 0)
        return self

    def transform(self, X):
        check_is_fitted(self, "trace_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise DimensionMismatch(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        if not self.scale_ > 0:
            raise DegenerateRegressor("reweighted feature has zero spread")
        x = X[:, int(self.feature)]
        return np.column_stack([_kernel(x, c, self.scale_) for c in self.centers_])
