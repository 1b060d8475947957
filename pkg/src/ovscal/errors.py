"""Exception hierarchy shared across the package."""


class OvscalError(Exception):
    """Base class for all package errors."""


class ShapeError(OvscalError, ValueError):
    """Array dimensions do not match what an operation requires."""


class ConfigError(OvscalError, ValueError):
    """A configuration value violates its contract."""


class EmptyMaskError(OvscalError, ValueError):
    """A mask proposal has no foreground pixels."""


class DegenerateEmbeddingError(OvscalError, ValueError):
    """An embedding vector is zero (or non-finite) and cannot be classified."""


class ContractError(OvscalError, ValueError):
    """An input violates a documented numerical contract (e.g. unnormalized probabilities)."""
