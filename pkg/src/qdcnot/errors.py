"""Exception types shared across the package."""


class ContractError(ValueError):
    """An argument violates a documented precondition."""


class UnsupportedConfigurationError(NotImplementedError):
    """The request is valid physics but outside what the engine models."""


class ConfigError(ValueError):
    """Invalid run configuration or source description."""


class NormalizationError(ValueError):
    """Not enough reference signal to normalize peak areas."""


class UndefinedQuantityError(ValueError):
    """A figure of merit is undefined for the given inputs (e.g. all-zero areas)."""


class OutOfModelError(ValueError):
    """Input lies outside the range where an analytic model can be inverted."""
