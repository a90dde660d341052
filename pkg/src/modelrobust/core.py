"""Data containers, random streams and synthetic populations.

A :class:`Dataset` is the empirical distribution of N cases with optional
mean-normalized case weights.  A :class:`SyntheticPopulation` is a fully
specified joint law ``P(Y|X) x P(X)`` that can be sampled and that carries
quadrature rules for both the regressor law and the conditional response
law, which is what the conditional-parameter and variance-decomposition
oracles are built on.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import roots_hermitenorm, roots_legendre

from .exceptions import (
    DimensionMismatch,
    OracleUnavailable,
    UnsupportedNoiseLaw,
)

__all__ = [
    "RANK_TOLERANCE",
    "Dataset",
    "SeededStream",
    "UniformLaw",
    "NormalLaw",
    "NoiseLaw",
    "SyntheticPopulation",
    "acceptability_check",
    "sample_population",
    "normalize_weights",
]

#: smallest/largest singular value ratio below which regressors are collinear
RANK_TOLERANCE = 1e-10

_GH_NODES = 64
_MC_FALLBACK_SIZE = 200_000


def _frozen(a):
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


def normalize_weights(w) -> np.ndarray:
    """Rescale nonnegative weights to mean one."""
    w = np.asarray(w, dtype=float)
    if w.ndim != 1:
        raise DimensionMismatch("weights must be one-dimensional")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise ValueError("weights must be finite and nonnegative")
    m = w.mean()
    if m <= 0:
        raise ValueError("weights must not all be zero")
    return w / m


@dataclass(frozen=True, eq=False)
class Dataset:
    """Regressor matrix, response vector and optional case weights.

    ``case_weights`` are rescaled to mean one at construction so that
    weighted empirical means read as ``mean(w * g)``.
    """

    regressors: np.ndarray
    response: np.ndarray
    column_names: tuple[str, ...] | None = None
    case_weights: np.ndarray | None = None

    def __post_init__(self):
        X = np.asarray(self.regressors, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        y = np.asarray(self.response, dtype=float).ravel()
        if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
            raise DimensionMismatch("regressors must be a non-empty N x p matrix")
        if y.shape[0] != X.shape[0]:
            raise DimensionMismatch(
                f"response has {y.shape[0]} rows, regressors have {X.shape[0]}"
            )
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ValueError("regressors and response must be finite")
        names = self.column_names
        if names is None:
            names = tuple(f"x{j}" for j in range(X.shape[1]))
        names = tuple(str(n) for n in names)
        if len(names) != X.shape[1]:
            raise DimensionMismatch("column_names must have one entry per column")
        w = self.case_weights
        if w is not None:
            w = normalize_weights(w)
            if w.shape[0] != X.shape[0]:
                raise DimensionMismatch("case_weights must have one entry per row")
            w = _frozen(w)
        object.__setattr__(self, "regressors", _frozen(X))
        object.__setattr__(self, "response", _frozen(y))
        object.__setattr__(self, "column_names", names)
        object.__setattr__(self, "case_weights", w)

    @property
    def n_cases(self) -> int:
        return self.regressors.shape[0]

    @property
    def n_regressors(self) -> int:
        return self.regressors.shape[1]

    @property
    def weights(self) -> np.ndarray:
        """Case weights, all ones when none were given."""
        if self.case_weights is None:
            return np.ones(self.n_cases)
        return self.case_weights

    def with_weights(self, weights) -> "Dataset":
        return dataclasses.replace(self, case_weights=weights)

    def take(self, index) -> "Dataset":
        """Rows ``index`` (with repetition allowed) as a new unweighted dataset."""
        index = np.asarray(index)
        return Dataset(self.regressors[index], self.response[index], self.column_names)

    def column(self, name_or_index) -> np.ndarray:
        if isinstance(name_or_index, str):
            try:
                j = self.column_names.index(name_or_index)
            except ValueError:
                raise KeyError(f"no regressor column named {name_or_index!r}") from None
        else:
            j = int(name_or_index)
        return self.regressors[:, j]

    def column_index(self, name_or_index) -> int:
        if isinstance(name_or_index, str):
            if name_or_index not in self.column_names:
                raise KeyError(f"no regressor column named {name_or_index!r}")
            return self.column_names.index(name_or_index)
        return int(name_or_index)


@dataclass(frozen=True)
class SeededStream:
    """Deterministic random stream keyed by ``(master_seed, stream_id)``.

    Streams are counter-based (Philox) and independent across ids, so a
    replicate's draws never depend on which thread ran it or in which order.
    """

    master_seed: int = 0
    stream_id: int = 0
    path: tuple[int, ...] = ()

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(
            entropy=int(self.master_seed) & (2**64 - 1),
            spawn_key=(int(self.stream_id),) + tuple(int(k) for k in self.path),
        )
        return np.random.Generator(np.random.Philox(seq))

    def child(self, index: int) -> "SeededStream":
        return SeededStream(self.master_seed, self.stream_id, self.path + (int(index),))


def acceptability_check(data, tol: float = RANK_TOLERANCE) -> str:
    """Return ``"acceptable"`` or ``"collinear"``.

    Rows with zero case weight do not count; the remaining rows are scaled
    by the square root of their weights before the singular values are
    compared.
    """
    if isinstance(data, Dataset):
        X, w = data.regressors, data.weights
    else:
        X = np.atleast_2d(np.asarray(data, dtype=float))
        w = np.ones(X.shape[0])
    Xw = X * np.sqrt(np.clip(w, 0, None))[:, None]
    s = np.linalg.svd(Xw, compute_uv=False)
    if s.size < X.shape[1] or s[0] == 0 or s[-1] / s[0] < tol:
        return "collinear"
    return "acceptable"


# -- regressor laws ----------------------------------------------------------


class UniformLaw:
    """Uniform law on ``[low, high]``; composite Gauss-Legendre quadrature."""

    def __init__(self, low: float = 0.0, high: float = 1.0, panels: int = 16, order: int = 16):
        if not high > low:
            raise ValueError("need high > low")
        self.low, self.high = float(low), float(high)
        self.panels, self.order = panels, order

    def sample(self, rng, size):
        return rng.uniform(self.low, self.high, size=size)

    def quadrature(self):
        t, w = roots_legendre(self.order)
        edges = np.linspace(self.low, self.high, self.panels + 1)
        half = np.diff(edges) / 2
        mid = (edges[:-1] + edges[1:]) / 2
        nodes = (mid[:, None] + half[:, None] * t[None, :]).ravel()
        weights = (half[:, None] * w[None, :]).ravel() / (self.high - self.low)
        return nodes, weights

    @property
    def mean(self):
        return (self.low + self.high) / 2

    @property
    def sd(self):
        return (self.high - self.low) / np.sqrt(12.0)

    def __repr__(self):
        return f"UniformLaw({self.low}, {self.high})"


class NormalLaw:
    """Normal law; Gauss-Hermite quadrature."""

    def __init__(self, mean: float = 0.0, sd: float = 1.0, order: int = 80):
        if not sd > 0:
            raise ValueError("need sd > 0")
        self.mean, self.sd, self.order = float(mean), float(sd), order

    def sample(self, rng, size):
        return rng.normal(self.mean, self.sd, size=size)

    def quadrature(self):
        z, w = roots_hermitenorm(self.order)
        keep = w > 1e-300
        return self.mean + self.sd * z[keep], w[keep] / w[keep].sum()

    def __repr__(self):
        return f"NormalLaw({self.mean}, {self.sd})"


# -- conditional response laws -------------------------------------------------


_NOISE_KINDS = ("gaussian", "zero", "bernoulli")


@dataclass(frozen=True)
class NoiseLaw:
    """Conditional response law around the mean function.

    kind
        ``"gaussian"`` (``sigma`` a float for homoskedastic noise or a
        callable of the covariate matrix for heteroskedastic noise),
        ``"zero"`` (deterministic response) or ``"bernoulli"`` (the mean
        function is the success probability).
    """

    kind: str
    sigma: float | Callable[[np.ndarray], np.ndarray] | None = None

    def __post_init__(self):
        kind = {"bernoulli-logistic": "bernoulli", "deterministic": "zero"}.get(
            self.kind, self.kind
        )
        if kind not in _NOISE_KINDS:
            raise UnsupportedNoiseLaw(f"unsupported noise law {self.kind!r}")
        if kind == "gaussian" and self.sigma is None:
            raise UnsupportedNoiseLaw("gaussian noise needs sigma")
        object.__setattr__(self, "kind", kind)

    def sd(self, Z):
        if callable(self.sigma):
            return np.asarray(self.sigma(Z), dtype=float)
        return np.full(Z.shape[0], float(self.sigma))

    def variance(self, Z, mu):
        if self.kind == "gaussian":
            return self.sd(Z) ** 2
        if self.kind == "bernoulli":
            return mu * (1 - mu)
        return np.zeros_like(mu)


@dataclass(frozen=True, eq=False)
class SyntheticPopulation:
    """Joint law of ``(Y, X)`` with analytic mean and quadrature oracles.

    Parameters
    ----------
    covariate_law : UniformLaw, NormalLaw or any object with ``sample``
        Law of each covariate (covariates are iid).  Objects without a
        ``quadrature`` method make population expectations fall back to a
        large fixed-seed Monte Carlo sample.
    mean_fn : callable
        Maps the ``n x d`` covariate matrix to ``E[Y | X]``.
    noise : NoiseLaw
    n_covariates : int
    intercept : bool
        Prepend a column of ones to the design.
    """

    covariate_law: object
    mean_fn: Callable[[np.ndarray], np.ndarray]
    noise: NoiseLaw
    n_covariates: int = 1
    intercept: bool = True
    name: str = "custom"
    params: dict = field(default_factory=dict)

    @property
    def column_names(self) -> tuple[str, ...]:
        cov = ("x",) if self.n_covariates == 1 else tuple(
            f"x{j + 1}" for j in range(self.n_covariates)
        )
        return (("intercept",) if self.intercept else ()) + cov

    @property
    def dim(self) -> int:
        return self.n_covariates + int(self.intercept)

    def design(self, Z) -> np.ndarray:
        Z = np.asarray(Z, dtype=float).reshape(-1, self.n_covariates)
        if self.intercept:
            return np.column_stack([np.ones(Z.shape[0]), Z])
        return Z

    def covariates(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.dim:
            raise DimensionMismatch(f"design rows must have {self.dim} columns")
        return X[:, 1:] if self.intercept else X

    def mean(self, X) -> np.ndarray:
        """``E[Y | X = x]`` for design rows ``X``."""
        return np.asarray(self.mean_fn(self.covariates(X)), dtype=float)

    def conditional_variance(self, X) -> np.ndarray:
        Z = self.covariates(X)
        return self.noise.variance(Z, self.mean_fn(Z))

    def sample(self, n: int, stream: SeededStream) -> Dataset:
        return sample_population(self, n, stream)

    # -- quadrature -----------------------------------------------------

    def regressor_quadrature(self) -> tuple[np.ndarray, np.ndarray]:
        """Design nodes and probability weights representing ``P(X)``."""
        law = self.covariate_law
        if hasattr(law, "quadrature"):
            z, w = law.quadrature()
            grids = np.meshgrid(*([z] * self.n_covariates), indexing="ij")
            wgrids = np.meshgrid(*([w] * self.n_covariates), indexing="ij")
            Z = np.column_stack([g.ravel() for g in grids])
            W = np.prod(np.column_stack([g.ravel() for g in wgrids]), axis=1)
            return self.design(Z), W / W.sum()
        rng = SeededStream(0x5EED, 0).generator()
        Z = law.sample(rng, (_MC_FALLBACK_SIZE, self.n_covariates))
        return self.design(Z), np.full(_MC_FALLBACK_SIZE, 1.0 / _MC_FALLBACK_SIZE)

    def response_nodes(self, X, linear_in_y: bool = False):
        """Quadrature rule for ``Y | X = x`` at each design row.

        Returns ``(Y, W)``, both ``K x n``; column ``i`` is a discrete law
        whose expectations match those of ``Y | X = x_i``.  Gaussian noise
        uses 64-point Gauss-Hermite nodes, or the exact two-point rule
        ``mu +- sigma`` when the integrand is linear in ``y``.
        """
        Z = self.covariates(X)
        mu = np.asarray(self.mean_fn(Z), dtype=float)
        n = mu.shape[0]
        kind = self.noise.kind
        if kind == "zero":
            return mu[None, :], np.ones((1, n))
        if kind == "bernoulli":
            Y = np.vstack([np.zeros(n), np.ones(n)])
            return Y, np.vstack([1 - mu, mu])
        if kind == "gaussian":
            sd = self.noise.sd(Z)
            if linear_in_y:
                z, w = np.array([-1.0, 1.0]), np.array([0.5, 0.5])
            else:
                z, w = roots_hermitenorm(_GH_NODES)
                w = w / w.sum()
            return mu[None, :] + sd[None, :] * z[:, None], np.repeat(w[:, None], n, axis=1)
        raise OracleUnavailable(f"no conditional quadrature for noise law {kind!r}")

    def expect(self, fn) -> np.ndarray:
        """``E_P[fn(X)]`` by regressor quadrature, for vector-valued ``fn``."""
        X, w = self.regressor_quadrature()
        vals = np.asarray(fn(X), dtype=float)
        return np.tensordot(w, vals, axes=(0, 0))

    def covariate_sd(self, j: int) -> float:
        """Population standard deviation of design column ``j``."""
        X, w = self.regressor_quadrature()
        m = w @ X[:, j]
        return float(np.sqrt(w @ (X[:, j] - m) ** 2))


def sample_population(pop: SyntheticPopulation, n: int, stream: SeededStream) -> Dataset:
    """Draw ``n`` iid cases from ``pop``; deterministic given ``stream``."""
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = stream.generator()
    Z = np.asarray(pop.covariate_law.sample(rng, (n, pop.n_covariates)), dtype=float)
    mu = np.asarray(pop.mean_fn(Z), dtype=float)
    kind = pop.noise.kind
    if kind == "zero":
        y = mu.copy()
    elif kind == "gaussian":
        y = mu + pop.noise.sd(Z) * rng.standard_normal(n)
    elif kind == "bernoulli":
        y = (rng.uniform(size=n) < mu).astype(float)
    else:  # pragma: no cover - NoiseLaw validates kinds
        raise UnsupportedNoiseLaw(kind)
    return Dataset(pop.design(Z), y, pop.column_names)
