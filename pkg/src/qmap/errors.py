"""Exception hierarchy for the qmap engine."""


class QmapError(Exception):
    """Base class for all engine errors."""


class DimensionError(QmapError):
    """Incompatible or out-of-range matrix dimensions."""


class ContractError(QmapError):
    """A documented precondition was violated by the caller."""


class PositivityError(QmapError):
    """An operator that must be positive semidefinite is not, beyond tolerance."""


class SupportError(QmapError):
    """Relative entropy requested between states with incompatible supports."""


class ConvergenceError(QmapError):
    """An iterative procedure failed to reach its tolerance."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class IntegrityError(QmapError):
    """Internally inconsistent results (e.g. a certificate that contradicts
    the measured entropy production)."""


class CapacityError(QmapError):
    """A configured budget (dimension, record count) would be exceeded."""


class SchemaError(QmapError):
    """A scenario file failed structural validation."""
