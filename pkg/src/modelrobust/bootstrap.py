"""M-of-N pairs bootstrap, the normalized bootstrap variance and bagging.

A resample of size M from N cases is represented by its multinomial count
vector; the functional is refit on the original rows with the counts as
case weights.  Specs with a vectorized closed form (mean, OLS, ridge) are
refit for a whole block of replicates at once.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from ._parallel import chunked, parallel_map
from .core import Dataset, SeededStream, SyntheticPopulation, acceptability_check
from .estimating_equations import SolverConfig, fit_functional
from .exceptions import (
    AllResamplesFailed,
    ExcessiveFailures,
    InvalidHyperparameter,
    ModelRobustError,
)
from .functionals import FunctionalSpec
from .inference import sandwich_variance

__all__ = [
    "BootstrapPlan",
    "BootstrapResult",
    "m_of_n_bootstrap",
    "plugin_limit_check",
    "bagged_functional",
    "fit_weight_matrix",
    "exhaustive_counts",
]

EXHAUSTIVE_LIMIT = 10**6
DEFAULT_MAX_FAIL = 0.10
_BLOCK = 2048


@dataclass(frozen=True)
class BootstrapPlan:
    """Resample size ``M``, replicate count ``B``, stream and mode.

    In ``"exhaustive"`` mode ``B`` is ignored and every distinct resample
    is evaluated with its multinomial probability; this needs
    ``N**M <= 10**6``.
    """

    M: int
    B: int = 1000
    stream: SeededStream = SeededStream()
    mode: str = "monte-carlo"

    def __post_init__(self):
        if self.M < 1 or self.B < 1:
            raise InvalidHyperparameter("M and B must be at least 1")
        if self.mode not in ("monte-carlo", "exhaustive"):
            raise InvalidHyperparameter(f"unknown bootstrap mode {self.mode!r}")


@dataclass(frozen=True, eq=False)
class BootstrapResult:
    """Replicates (``NaN`` rows for failed resamples) and the variance ``bv``.

    ``bv = M * Var*(theta*)`` with the population-style ``1/B`` variance
    (probability-weighted in exhaustive mode); ``se_boot = sqrt(diag(bv)/N)``.
    """

    replicates: np.ndarray
    ok: np.ndarray
    probs: np.ndarray
    bv: np.ndarray
    se_boot: np.ndarray
    failures: int
    M: int
    n: int

    @property
    def mean(self) -> np.ndarray:
        return self.probs[self.ok] @ self.replicates[self.ok] / self.probs[self.ok].sum()


def _as_fitter(spec_or_closed_form, cfg):
    """``(X, y, W) -> (thetas, ok)`` for a block of weight rows."""
    if isinstance(spec_or_closed_form, FunctionalSpec):
        spec = spec_or_closed_form
        if spec.batch_closed_form is not None and spec.binder is None:
            return spec.batch_closed_form

        def loop(X, y, W):
            out, ok = [], np.zeros(W.shape[0], dtype=bool)
            for b, w in enumerate(W):
                try:
                    d = Dataset(X, y, case_weights=w)
                    if acceptability_check(d) != "acceptable":
                        raise ModelRobustError("collinear resample")
                    out.append(fit_functional(spec, d, cfg).theta_hat)
                    ok[b] = True
                except (ModelRobustError, ValueError, np.linalg.LinAlgError):
                    out.append(None)
            q = next((len(t) for t in out if t is not None), 0)
            th = np.full((W.shape[0], q), np.nan)
            for b, t in enumerate(out):
                if t is not None:
                    th[b] = t
            return th, ok

        return loop
    fn: Callable = spec_or_closed_form

    def plain(X, y, W):
        out, ok = [], np.zeros(W.shape[0], dtype=bool)
        for b, w in enumerate(W):
            try:
                out.append(np.atleast_1d(np.asarray(fn(X, y, w), dtype=float)))
                ok[b] = np.all(np.isfinite(out[-1]))
            except (ModelRobustError, ValueError, np.linalg.LinAlgError):
                out.append(None)
        q = next((len(t) for t in out if t is not None), 0)
        th = np.full((W.shape[0], q), np.nan)
        for b, t in enumerate(out):
            if t is not None:
                th[b] = t
        return th, ok

    return plain


def fit_weight_matrix(spec_or_closed_form, data: Dataset, W, cfg: SolverConfig | None = None,
                      threads: int | None = None):
    """Refit on ``data`` once per row of the weight matrix ``W`` (B x N).

    Rows of ``W`` multiply the dataset's own case weights.  Returns
    ``(thetas, ok)``; failed fits are ``NaN`` rows with ``ok = False``.
    """
    fitter = _as_fitter(spec_or_closed_form, cfg or SolverConfig())
    X, y = data.regressors, data.response
    W = np.asarray(W, dtype=float) * data.weights[None, :]
    blocks = chunked(W.shape[0], _BLOCK)
    parts = parallel_map(lambda r: fitter(X, y, W[r.start:r.stop]), blocks, threads)
    q = max((p[0].shape[1] for p in parts), default=0)
    thetas = np.vstack([p[0] if p[0].shape[1] == q else np.full((p[0].shape[0], q), np.nan) for p in parts])
    ok = np.concatenate([p[1] for p in parts])
    return thetas, ok


def exhaustive_counts(n: int, M: int):
    """All distinct count vectors of M draws from n cases, with probabilities."""
    if n**M > EXHAUSTIVE_LIMIT:
        raise InvalidHyperparameter(f"exhaustive mode needs N**M <= {EXHAUSTIVE_LIMIT}")
    rows, probs = [], []
    logfact = math.lgamma(M + 1) - M * math.log(n)
    for combo in itertools.combinations_with_replacement(range(n), M):
        c = np.bincount(combo, minlength=n)
        rows.append(c)
        probs.append(math.exp(logfact - sum(math.lgamma(k + 1) for k in c)))
    return np.array(rows, dtype=float), np.array(probs)


def _mc_counts(n, M, B, stream, threads=None):
    pvals = np.full(n, 1.0 / n)

    def block(r):
        return np.stack([stream.child(b).generator().multinomial(M, pvals) for b in r])

    return np.vstack(parallel_map(block, chunked(B, _BLOCK), threads)).astype(float)


def _weighted_cov(thetas, probs):
    p = probs / probs.sum()
    # shifting by one replicate first keeps a constant column exactly zero
    t = thetas - thetas[0]
    d = t - p @ t
    cov = (d * p[:, None]).T @ d
    return (cov + cov.T) / 2


def _summarize(thetas, ok, probs, M, n, max_fail):
    fail_mass = probs[~ok].sum() / probs.sum()
    if not np.any(ok):
        raise AllResamplesFailed("no resample produced a fit")
    if fail_mass > max_fail:
        raise ExcessiveFailures(
            f"{fail_mass:.1%} of resamples failed (limit {max_fail:.0%}); consider a larger M"
        )
    bv = M * _weighted_cov(thetas[ok], probs[ok])
    se = np.sqrt(np.clip(np.diag(bv), 0, None) / n)
    return BootstrapResult(thetas, ok, probs, bv, se, int((~ok).sum()), M, n)


def m_of_n_bootstrap(spec_or_closed_form, data: Dataset, plan: BootstrapPlan,
                     cfg: SolverConfig | None = None, max_fail: float = DEFAULT_MAX_FAIL,
                     threads: int | None = None) -> BootstrapResult:
    """Pairs bootstrap with resamples of size ``plan.M``.

    Resamples whose fit fails (collinear regressors, solver failure) are
    counted in ``failures`` and left out of ``bv``.

    Raises
    ------
    AllResamplesFailed
        If no resample could be fitted.
    ExcessiveFailures
        If more than ``max_fail`` of the resamples (by probability) failed.
    """
    n = data.n_cases
    if plan.mode == "exhaustive":
        counts, probs = exhaustive_counts(n, plan.M)
    else:
        counts = _mc_counts(n, plan.M, plan.B, plan.stream, threads)
        probs = np.ones(plan.B)
    thetas, ok = fit_weight_matrix(spec_or_closed_form, data, counts, cfg, threads)
    return _summarize(thetas, ok, probs, plan.M, n, max_fail)


def plugin_limit_check(spec: FunctionalSpec, data: Dataset, M_grid, B: int, stream: SeededStream,
                       cfg: SolverConfig | None = None, threads: int | None = None) -> list[dict]:
    """Compare ``bv(M)`` with the plug-in sandwich for each ``M`` in ``M_grid``.

    Returns one record per ``M`` with keys ``M``, ``bv``, ``av_plugin`` and
    ``rel_gap = ||bv - av|| / ||av||`` (Frobenius norms).
    """
    est = fit_functional(spec, data, cfg)
    av = sandwich_variance(est).av_total
    rows = []
    for k, M in enumerate(M_grid):
        plan = BootstrapPlan(int(M), int(B), stream.child(k))
        res = m_of_n_bootstrap(spec, data, plan, cfg, threads=threads)
        gap = np.linalg.norm(res.bv - av) / np.linalg.norm(av)
        rows.append({"M": int(M), "bv": res.bv, "av_plugin": av, "rel_gap": float(gap),
                     "failures": res.failures})
    return rows


def bagged_functional(spec_or_closed_form, source, M: int, B: int = 1000,
                      stream: SeededStream = SeededStream(), mode: str = "monte-carlo",
                      cfg: SolverConfig | None = None, max_fail: float = DEFAULT_MAX_FAIL,
                      threads: int | None = None) -> np.ndarray:
    """``E[theta(P*_M)]``: the functional averaged over size-``M`` empirical laws.

    ``source`` is a Dataset (resampling its rows) or a SyntheticPopulation
    (drawing ``M`` fresh cases per replicate).  Failed evaluations are
    excluded and the remaining probabilities renormalized.
    """
    if isinstance(source, SyntheticPopulation):
        if mode == "exhaustive":
            raise InvalidHyperparameter("exhaustive mode needs a finite dataset")
        if isinstance(spec_or_closed_form, FunctionalSpec):
            def one(b):
                try:
                    d = source.sample(M, stream.child(b))
                    return fit_functional(spec_or_closed_form, d, cfg).theta_hat
                except ModelRobustError:
                    return None
        else:
            def one(b):
                d = source.sample(M, stream.child(b))
                try:
                    return np.atleast_1d(spec_or_closed_form(d.regressors, d.response, d.weights))
                except ModelRobustError:
                    return None
        vals = parallel_map(one, range(B), threads)
        good = [v for v in vals if v is not None]
        if not good:
            raise AllResamplesFailed("no replicate produced a fit")
        if 1 - len(good) / B > max_fail:
            raise ExcessiveFailures(f"{1 - len(good) / B:.1%} of replicates failed")
        return np.mean(good, axis=0)
    plan = BootstrapPlan(M, B, stream, mode)
    res = m_of_n_bootstrap(spec_or_closed_form, source, plan, cfg, max_fail, threads)
    return res.mean
