"""Exception types shared across the package."""


class BeamsecError(Exception):
    """Base class for all package errors."""


class DimensionError(BeamsecError, ValueError):
    """Array shapes or system dimensions are inconsistent."""


class ConfigError(BeamsecError, ValueError):
    """Invalid configuration value or schema violation.

    ``path`` names the offending field (dotted), when known.
    """

    def __init__(self, message, path=None):
        self.path = path
        if path:
            message = f"{path}: {message}"
        super().__init__(message)


class ScopeError(BeamsecError, ValueError):
    """A check was requested outside the regime where it is claimed to hold."""


class ConvergenceError(BeamsecError, RuntimeError):
    """An iterative procedure stopped without meeting its tolerance."""

    def __init__(self, message, residual=None, iterations=None, context=None):
        self.residual = residual
        self.iterations = iterations
        self.context = dict(context or {})
        details = []
        if residual is not None:
            details.append(f"residual={residual:.3e}")
        if iterations is not None:
            details.append(f"iterations={iterations}")
        if self.context:
            details.extend(f"{k}={v}" for k, v in self.context.items())
        if details:
            message = f"{message} ({', '.join(details)})"
        super().__init__(message)
