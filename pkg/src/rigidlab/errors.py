"""Exception types shared across the package."""


class DomainError(ValueError):
    """Input outside the mathematical domain of an operation (e.g. a non-SPD metric)."""


class DimensionError(ValueError):
    """Matrix or vector shapes that do not fit together."""


class OutOfChartError(DomainError):
    """A point (typically a mapped point f(x)) lies outside the chart of a field."""


class ConfigError(ValueError):
    """Invalid run configuration."""
