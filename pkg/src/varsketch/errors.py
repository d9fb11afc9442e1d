"""Exception hierarchy shared across the package."""


class VarsketchError(Exception):
    """Base class for all package errors."""


class ValidationError(VarsketchError, ValueError):
    """Input violates a documented precondition."""


class ShapeMismatchError(ValidationError):
    """Operands have incompatible shapes."""


class MaterializationCapError(VarsketchError, OverflowError):
    """Materializing would exceed the configured entry cap."""


class DegenerateFitError(VarsketchError, RuntimeError):
    """Monte Carlo data cannot support a fit (e.g. all failure rates 0 or 1)."""


class ConstructionError(VarsketchError, RuntimeError):
    """A polynomial construction failed its grid verification."""

    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness
