"""Exception types shared across the package."""


class DomainError(ValueError):
    """An input lies outside the domain an operation is defined on."""


class ResourceError(RuntimeError):
    """A construction would exceed a configured size cap."""


class ParseError(ValueError):
    """Malformed text input (config file or SDPA stream)."""

    def __init__(self, message, lineno=None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


class SolverFailure(RuntimeError):
    """A solve did not produce a usable answer."""

    def __init__(self, message, solution=None):
        super().__init__(message)
        self.solution = solution
