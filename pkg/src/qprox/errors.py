"""Exception types raised across the package."""


class QproxError(Exception):
    pass


class InvalidArgument(QproxError, ValueError):
    pass


class NonLipschitzPoint(QproxError):
    """Subgradient requested where no finite Clarke subgradient exists."""


class UnsupportedFamily(QproxError):
    """No proven quasar constants are available for this loss family."""


class DegenerateScale(QproxError, ValueError):
    pass


class DegenerateInstance(QproxError):
    pass


class DegenerateMetric(QproxError, ValueError):
    pass


class IncompleteTrace(QproxError):
    pass


class CannotFit(QproxError, ValueError):
    pass


class RequiresDistance(QproxError):
    pass


class NotApplicable(QproxError):
    pass


class ConfigError(QproxError, ValueError):
    pass
