"""
Errors Module

Every failure raised by svrbench derives from SvrBenchError. Each class
carries the exit code the command line reports for its category:

- 1: usage / configuration problems
- 2: data and file format problems
- 3: numerical failures
"""


class SvrBenchError(Exception):
    """Base class for all svrbench errors."""

    exit_code = 2


class ConfigError(SvrBenchError):
    """Invalid configuration key or value."""

    exit_code = 1


class FormatError(SvrBenchError, ValueError):
    """An input file or stream does not follow its declared format."""


class DimensionMismatch(SvrBenchError, ValueError):
    """Vectors, sets or models with incompatible dimensions were combined."""


class InsufficientData(SvrBenchError):
    """Not enough speakers or utterances to perform the requested operation."""


class MissingUtterance(SvrBenchError):
    """A trial references an utterance that is not in the embedding set."""


class MissingLabels(SvrBenchError):
    """Metrics were requested on scores without target/nontarget labels."""


class EmptyClass(SvrBenchError):
    """Metrics need at least one target and one nontarget score."""


class DegenerateCohort(SvrBenchError):
    """Cohort scores have zero spread, so normalization is undefined."""


class MissingCell(SvrBenchError):
    """A summary table was requested for a (method, mode) cell never computed."""


class ZeroVector(SvrBenchError):
    """A vector with (near) zero norm where a direction is required."""

    exit_code = 3


class SingularCovariance(SvrBenchError):
    """A covariance matrix is not positive definite even after regularization."""

    exit_code = 3


class NumericalDivergence(SvrBenchError):
    """Training produced a non-finite loss."""

    exit_code = 3
