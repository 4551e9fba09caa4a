"""Exception hierarchy shared across the package.

Every error raised by the library derives from :class:`MmmError` and carries
a stable ``code`` string so that the CLI can emit machine-readable error
objects with fixed prefixes.
"""


class MmmError(Exception):
    """Base class for all library errors."""

    code = "E_INTERNAL"


class DomainError(MmmError):
    """A value lies outside the mathematical domain of an operation."""

    code = "E_DOMAIN"


class DimensionError(MmmError):
    """Array shapes or series lengths are inconsistent."""

    code = "E_DIMENSION"


class StructuralError(MmmError):
    """Named parameter sets or layouts do not line up."""

    code = "E_STRUCTURE"


class IngestionError(MmmError):
    """A dataset file failed validation; message names row/column."""

    code = "E_INGEST"


class SamplerError(MmmError):
    """The HMC sampler hit a non-recoverable condition."""

    code = "E_SAMPLER"


class OptimizationError(MmmError):
    """Every optimizer restart failed before making progress."""

    code = "E_OPTIM"


class CollinearityError(MmmError):
    """A regression design matrix is singular; message names columns."""

    code = "E_COLLINEAR"


class MetricError(MmmError):
    """A requested metric is undefined for the given inputs."""

    code = "E_METRIC"


class ConfigError(MmmError):
    """A run configuration is invalid or self-contradictory."""

    code = "E_CONFIG"
