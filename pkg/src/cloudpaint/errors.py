"""Exception hierarchy shared across the package.

CLI exit-code mapping: ConfigurationError -> 2, DataError -> 3,
NumericalError -> 4.
"""


class CloudpaintError(Exception):
    pass


class ConfigurationError(CloudpaintError):
    """Missing/inconsistent configuration (calibration bundle, camera ids)."""


class DataError(CloudpaintError):
    """Malformed or invalid input data."""


class InvalidArgumentError(DataError):
    """Arguments violate an operation's preconditions."""


class MalformedStreamError(DataError):
    """Non-monotonic timestamps in a sensor stream."""


class NumericalError(CloudpaintError):
    """An estimation or optimisation step failed."""


class EstimationFailedError(NumericalError):
    """RANSAC / model fitting could not find an acceptable model."""


class DecompositionFailedError(NumericalError):
    """No essential-matrix pose candidate passed the cheirality test."""


class IllConditionedError(NumericalError):
    """Geometry too degenerate to solve (zero baseline, parallel rays)."""


class BehindCameraError(NumericalError):
    """Triangulated point has negative depth."""


class DegenerateFitError(NumericalError):
    """Regression input has no variance."""


class MatchingFailedError(NumericalError):
    """Cluster matching found no consistent assignment."""


class RegistrationError(NumericalError):
    """ICP coarse or refine phase failed."""
