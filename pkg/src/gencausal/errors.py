"""Exception types shared across the estimation modules."""


class EstimationError(Exception):
    """Base class for errors raised while fitting a model."""


class IdentificationError(EstimationError):
    """The requested parameter is not identified on this sample.

    Raised when a design has no usable variation: a fixed-effect factor
    with a single level, a treatment that is constant within every
    group, or a key regressor that is dropped as collinear.
    """


class ConvergenceError(EstimationError):
    """An iterative fit exhausted its iteration budget."""


class SeparationError(EstimationError):
    """A binary-response fit diverged because a covariate separates the outcomes."""


class BootstrapError(EstimationError):
    """Too many bootstrap replicates failed for the resampled distribution to be trusted."""


class DataError(Exception):
    """Input data violate a documented schema or consistency rule."""


class ConfigError(Exception):
    """A run configuration is malformed, unknown, or incomplete."""
