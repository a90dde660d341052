"""Model-robust regression inference.

Regression functionals fitted by objective minimization or estimating
equations, sandwich variances with their noise/approximation split, the
M-of-N bootstrap, density power scoring rules and reweighting diagnostics,
with synthetic populations that carry exact oracles for all of them.
"""
from .bootstrap import (
    BootstrapPlan,
    BootstrapResult,
    bagged_functional,
    exhaustive_counts,
    m_of_n_bootstrap,
    plugin_limit_check,
)
from .core import (
    Dataset,
    NoiseLaw,
    NormalLaw,
    SeededStream,
    SyntheticPopulation,
    UniformLaw,
    acceptability_check,
    normalize_weights,
    sample_population,
)
from .diagnostics import (
    DiagnosticTrace,
    KernelWeightSpec,
    MisspecificationTest,
    decile_centers,
    gaussian_weights,
    localized_functional,
    misspecification_test,
    reweighting_diagnostic,
)
from .estimating_equations import SolverConfig, bread_jacobian, ee_solve, fit_functional, solve_masses
from .estimators import ModelRobustRegressor, ReweightingDiagnostic
from .exceptions import *  # noqa: F401,F403
from .functionals import (
    FunctionalEstimate,
    FunctionalSpec,
    huber_spec,
    logistic_spec,
    mean_spec,
    ols_fit,
    ols_spec,
    quantile_spec,
    ridge_fit,
    ridge_spec,
)
from .inference import (
    OffsetReport,
    VarianceReport,
    conditional_influence,
    conditional_parameter,
    contamination_derivative,
    estimation_offsets,
    influence_values,
    partial_influence_x,
    population_parameter,
    sandwich_variance,
    variance_decomposition,
)
from .registry import make_functional
from .scoring import (
    BernoulliLogisticFamily,
    BregmanGenerator,
    DensityModel,
    DiscreteLaw,
    GaussianLinearFamily,
    divergence_D,
    entropy_H,
    expected_score,
    scoring_objective,
    scoring_rule_S,
)
from .simulation import BUILTIN_POPULATIONS, CltReport, EoDraws, builtin_population, clt_check, eo_sampler

__version__ = "0.1.0"
