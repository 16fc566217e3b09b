"""Exceptions raised by bagcn."""


class BagcnError(Exception):
    """Base error for the package."""


class ValidationError(BagcnError, ValueError):
    """Input rejected before any computation happened."""


class ShapeError(ValidationError):
    """Operand shapes do not satisfy an operation's contract."""


class TopologyError(ValidationError):
    """Skeleton topology is malformed or disconnected."""


class ConfigError(ValidationError):
    """Configuration failed schema or invariant validation."""


class DatasetError(ValidationError):
    """Manifest or blob is unreadable or inconsistent."""


class LabelError(ValidationError):
    """Class index outside the valid range."""


class NumericalError(BagcnError, ArithmeticError):
    """A NaN or Inf reached a place where it must not."""


class GradCheckError(NumericalError):
    """Taped gradients disagree with finite differences."""
