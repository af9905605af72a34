"""Exception types raised across the package."""


class DynAdmmError(Exception):
    """Base class for all package errors."""


class DimensionError(DynAdmmError, ValueError):
    """An array does not conform to the problem dimensions.

    ``block`` names the offending block index when one can be identified.
    """

    def __init__(self, message, block=None):
        if block is not None:
            message = f"block {block}: {message}"
        super().__init__(message)
        self.block = block


class ParameterError(DynAdmmError, ValueError):
    """A penalty, proximal weight or tolerance is out of range."""


class UnsupportedShapeError(DynAdmmError, ValueError):
    """The operation is not defined for this constraint shape."""


class ConfigurationError(DynAdmmError, ValueError):
    """Invalid solver or run configuration."""


class SubsolverError(DynAdmmError, RuntimeError):
    """A block subproblem solve violated the descent contract."""

    def __init__(self, message, block=None, report=None):
        if block is not None:
            message = f"block {block}: {message}"
        super().__init__(message)
        self.block = block
        self.report = report


class NonFiniteError(DynAdmmError, FloatingPointError):
    """A rollout or callback produced NaN/Inf; ``step`` is the index."""

    def __init__(self, message, step=None):
        if step is not None:
            message = f"step {step}: {message}"
        super().__init__(message)
        self.step = step


class TuningError(DynAdmmError, RuntimeError):
    """Penalty selection failed to certify a row."""

    def __init__(self, message, row=None):
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)
        self.row = row


class NewtonError(DynAdmmError, RuntimeError):
    """Newton iteration stagnated; ``step`` is the time-step index."""

    def __init__(self, message, step=None):
        if step is not None:
            message = f"step {step}: {message}"
        super().__init__(message)
        self.step = step
