"""Reweighting diagnostics for misspecification.

A functional that is well specified for ``P(Y|X)`` does not move when the
regressor distribution is reweighted.  Gaussian weights centered at a grid
of values of one regressor give *localized* functionals; their trace over
the grid, decorated with bootstrap bands, shows whether and how the fit
depends on where in regressor space it is taken.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bootstrap import _mc_counts, fit_weight_matrix
from .core import Dataset, SeededStream, SyntheticPopulation
from .estimating_equations import SolverConfig, fit_functional
from .exceptions import DegenerateRegressor, InvalidHyperparameter, ModelRobustError
from .inference import population_parameter

__all__ = [
    "KernelWeightSpec",
    "DiagnosticTrace",
    "MisspecificationTest",
    "gaussian_weights",
    "decile_centers",
    "localized_functional",
    "reweighting_diagnostic",
    "misspecification_test",
]


@dataclass(frozen=True)
class KernelWeightSpec:
    """Gaussian weight in regressor ``j`` centered at ``center``.

    The kernel scale is ``bandwidth * sd(X_j)``.
    """

    regressor: int | str
    center: float
    bandwidth: float = 1.0
    kind: str = "gaussian"

    def __post_init__(self):
        if not self.bandwidth > 0:
            raise InvalidHyperparameter("bandwidth multiple must be positive")
        if self.kind != "gaussian":
            raise InvalidHyperparameter(f"unsupported kernel {self.kind!r}")


def _kernel(x, center, scale):
    """Mean-one Gaussian weights, computed in log space so far-away centers
    still put all mass on the nearest points instead of underflowing."""
    z = -((x - center) ** 2) / (2.0 * scale**2)
    w = np.exp(z - z.max())
    return w / w.mean()


def _weighted_sd(x, w):
    m = np.average(x, weights=w)
    return float(np.sqrt(np.average((x - m) ** 2, weights=w)))


def gaussian_weights(data: Dataset, spec: KernelWeightSpec) -> np.ndarray:
    """Weights ``exp(-(x_j - xi)^2 / (2 (a sd_j)^2))`` rescaled to mean one.

    Raises
    ------
    DegenerateRegressor
        If regressor ``j`` has zero spread.
    """
    j = data.column_index(spec.regressor)
    x = data.regressors[:, j]
    sd = _weighted_sd(x, data.weights)
    if not sd > 0:
        raise DegenerateRegressor(f"regressor {data.column_names[j]!r} has zero spread")
    return _kernel(x, spec.center, spec.bandwidth * sd)


def decile_centers(x) -> np.ndarray:
    """The nine interior deciles of ``x`` (duplicates removed)."""
    return np.unique(np.quantile(np.asarray(x, dtype=float), np.arange(1, 10) / 10))


def localized_functional(source, functional, centers, bandwidth: float = 1.0, regressor=1,
                         cfg: SolverConfig | None = None) -> np.ndarray:
    """Functional of the reweighted law at each center (``K x q``).

    ``source`` is a Dataset (plug-in; failed fits give ``NaN`` rows) or a
    SyntheticPopulation (quadrature over the regressor law, with the
    population standard deviation of the regressor as kernel scale).
    """
    centers = np.atleast_1d(np.asarray(centers, dtype=float))
    if isinstance(source, SyntheticPopulation):
        j = source.column_names.index(regressor) if isinstance(regressor, str) else int(regressor)
        scale = bandwidth * source.covariate_sd(j)
        out = []
        for c in centers:
            def wfn(X, c=c):
                return np.exp(-((X[:, j] - c) ** 2) / (2 * scale**2))
            out.append(population_parameter(functional, source, cfg, weight_fn=wfn))
        return np.array(out)
    rows = []
    for c in centers:
        w = gaussian_weights(source, KernelWeightSpec(regressor, c, bandwidth))
        try:
            rows.append(fit_functional(functional, source.with_weights(w * source.weights), cfg).theta_hat)
        except ModelRobustError:
            rows.append(None)
    q = next((len(r) for r in rows if r is not None), source.n_regressors)
    return np.array([r if r is not None else np.full(q, np.nan) for r in rows])


def _resample_weights(data, j, counts, centers, bandwidth):
    """Per-center weight matrices for a block of count vectors.

    The regressor's spread is recomputed on each resample, centers stay
    fixed.  Returns an array ``K x B x N`` of counts times kernel weights.
    """
    x = data.regressors[:, j]
    base = counts * data.weights[None, :]
    tot = base.sum(axis=1, keepdims=True)
    m = (base @ x)[:, None] / tot
    sd = np.sqrt((base * (x[None, :] - m) ** 2).sum(axis=1, keepdims=True) / tot)
    out = []
    for c in centers:
        scale = bandwidth * sd
        z = -((x[None, :] - c) ** 2) / (2.0 * np.where(scale > 0, scale, np.inf) ** 2)
        z = np.where(counts > 0, z, -np.inf)
        k = np.exp(z - z.max(axis=1, keepdims=True))
        out.append(counts * k)
    return np.stack(out)


@dataclass(frozen=True, eq=False)
class DiagnosticTrace:
    """Localized estimates over a grid of centers with bootstrap bands."""

    centers: np.ndarray
    theta_at_center: np.ndarray
    theta_unweighted: np.ndarray
    boot_se: np.ndarray
    boot_bands: np.ndarray
    boot_replicate_traces: np.ndarray | None
    missing: np.ndarray
    regressor: str
    column_names: tuple[str, ...]
    bandwidth: float

    def records(self) -> list[dict]:
        """One record per (center, component), in grid order."""
        out = []
        for k, c in enumerate(self.centers):
            for i, name in enumerate(self.column_names):
                out.append({
                    "center": c, "component": name,
                    "estimate": self.theta_at_center[k, i],
                    "boot_se": self.boot_se[k, i],
                    "band_lo": self.boot_bands[k, i, 0],
                    "band_hi": self.boot_bands[k, i, 1],
                })
        return out


def reweighting_diagnostic(data: Dataset, functional, regressor, grid="deciles", bandwidth: float = 1.0,
                           B: int = 200, stream: SeededStream = SeededStream(),
                           cfg: SolverConfig | None = None, keep_replicates: bool = True,
                           threads: int | None = None) -> DiagnosticTrace:
    """Trace of the functional reweighted at each grid center.

    Bands are the point estimate plus/minus two bootstrap standard errors
    from ``B`` pairs resamples; each resample recomputes the regressor's
    spread and its weights before refitting.
    """
    j = data.column_index(regressor)
    x = data.regressors[:, j]
    centers = decile_centers(x) if isinstance(grid, str) and grid == "deciles" else np.asarray(grid, dtype=float)
    if isinstance(grid, str) and grid != "deciles":
        raise InvalidHyperparameter(f"unknown grid {grid!r}")
    if centers.ndim != 1 or np.any(np.diff(centers) <= 0):
        raise InvalidHyperparameter("centers must be strictly increasing")
    theta0 = fit_functional(functional, data, cfg).theta_hat
    q = theta0.size
    point = localized_functional(data, functional, centers, bandwidth, j, cfg)
    missing = np.any(~np.isfinite(point), axis=1)
    K = centers.size
    reps = np.full((B, K, q), np.nan)
    if B > 0:
        counts = _mc_counts(data.n_cases, data.n_cases, B, stream, threads)
        Wk = _resample_weights(data, j, counts, centers, bandwidth)
        raw = Dataset(data.regressors, data.response, data.column_names)
        for k in range(K):
            if missing[k]:
                continue
            th, ok = fit_weight_matrix(functional, raw, Wk[k] * data.weights[None, :], cfg, threads)
            reps[ok, k] = th[ok]
    with np.errstate(invalid="ignore"):
        se = np.nanstd(reps, axis=0) if B > 1 else np.zeros((K, q))
    se = np.where(np.isfinite(se), se, np.nan)
    bands = np.stack([point - 2 * se, point + 2 * se], axis=-1)
    return DiagnosticTrace(
        centers, point, theta0, se, bands, reps if keep_replicates else None, missing,
        data.column_names[j], data.column_names, float(bandwidth),
    )


@dataclass(frozen=True, eq=False)
class MisspecificationTest:
    delta: np.ndarray
    se: np.ndarray
    z: np.ndarray
    theta_w1: np.ndarray
    theta_w2: np.ndarray


def misspecification_test(data: Dataset, functional, w1: KernelWeightSpec, w2: KernelWeightSpec,
                          B: int = 200, stream: SeededStream = SeededStream(),
                          cfg: SolverConfig | None = None, threads: int | None = None) -> MisspecificationTest:
    """z-statistics for ``theta(w1 P) - theta(w2 P) = 0``.

    The standard error comes from ``B`` paired bootstrap replicates: each
    resample is reweighted both ways and refit.
    """
    t1 = fit_functional(functional, data.with_weights(gaussian_weights(data, w1) * data.weights), cfg).theta_hat
    t2 = fit_functional(functional, data.with_weights(gaussian_weights(data, w2) * data.weights), cfg).theta_hat
    delta = t1 - t2
    if w1 == w2:
        zero = np.zeros_like(delta)
        return MisspecificationTest(zero, zero.copy(), zero.copy(), t1, t2)
    counts = _mc_counts(data.n_cases, data.n_cases, B, stream, threads)
    raw = Dataset(data.regressors, data.response, data.column_names)
    th = []
    for spec in (w1, w2):
        j = data.column_index(spec.regressor)
        W = _resample_weights(data, j, counts, [spec.center], spec.bandwidth)[0]
        th.append(fit_weight_matrix(functional, raw, W * data.weights[None, :], cfg, threads))
    ok = th[0][1] & th[1][1]
    d = th[0][0][ok] - th[1][0][ok]
    se = d.std(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, delta / se, np.where(delta == 0, 0.0, np.inf * np.sign(delta)))
    return MisspecificationTest(delta, se, z, t1, t2)
