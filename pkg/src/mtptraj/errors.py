"""Exception hierarchy shared by all mtptraj modules.

Two branches matter for the CLI exit-code contract: ``InputError`` (bad
files, schemas, configuration; exit code 2) and ``ComputationError``
(estimation or numerical failure on valid input; exit code 1).
"""


class MtptrajError(Exception):
    """Base class for all mtptraj errors."""


class InputError(MtptrajError):
    """Invalid user input: files, schemas, shapes, configuration."""

    exit_code = 2


class ComputationError(MtptrajError):
    """Estimation or numerical failure on otherwise valid input."""

    exit_code = 1


class SchemaError(InputError):
    """CSV header does not match the expected wide-format schema."""


class DataError(InputError):
    """Missing or non-numeric cells, or invariant violations in a dataset."""


class PolicyError(ComputationError):
    """A policy produced an unusable (non-finite) exposure value."""


class ConfigurationError(InputError):
    """Invalid learner, fold, or run configuration."""


class EstimationError(ComputationError):
    """Nuisance estimation or EIF assembly failed; message carries (s, t)."""


class DegenerateContrastError(ComputationError):
    """A contrast row has (numerically) zero variance."""


class SingularCorrelationError(ComputationError):
    """Correlation matrix not usable even after the jitter schedule."""


class NumericsError(ComputationError):
    """Special-function or integration failure (domain, bracket, Cholesky)."""


class CalibrationError(ComputationError):
    """Outcome-scale calibration hit a zero denominator."""
