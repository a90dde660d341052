"""Exception hierarchy.

Every error raised on purpose by the package derives from
:class:`ModelRobustError`; the CLI maps the class name to its
machine-readable error line.
"""


class ModelRobustError(Exception):
    """Base class for all package errors."""


class InvalidHyperparameter(ModelRobustError, ValueError):
    pass


class DimensionMismatch(ModelRobustError, ValueError):
    pass


class CollinearRegressors(ModelRobustError, ArithmeticError):
    pass


class SingularSystem(ModelRobustError, ArithmeticError):
    pass


class SingularJacobian(SingularSystem):
    pass


class SingularBread(SingularSystem):
    pass


class NoConvergence(ModelRobustError, ArithmeticError):
    pass


class PerfectSeparation(ModelRobustError, ArithmeticError):
    pass


class NonFiniteScore(ModelRobustError, ArithmeticError):
    pass


class DomainError(ModelRobustError, ValueError):
    pass


class QuadratureFailure(ModelRobustError, ArithmeticError):
    pass


class OracleUnavailable(ModelRobustError):
    pass


class UnsupportedNoiseLaw(ModelRobustError, ValueError):
    pass


class UnknownPopulation(ModelRobustError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""


class DegenerateRegressor(ModelRobustError, ValueError):
    pass


class AllResamplesFailed(ModelRobustError):
    pass


class ExcessiveFailures(ModelRobustError):
    """Too many resamples or replicates failed to produce a fit."""


class DataFormatError(ModelRobustError, ValueError):
    """Malformed input file: bad header, missing or non-numeric values."""
