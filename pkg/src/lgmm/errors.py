"""Exception types shared across the toolkit."""


class DomainError(ValueError):
    """Input lies outside the mathematical domain of an operation."""


class SingularityError(DomainError):
    """State sits on a boundary where an SDE coefficient is singular."""


class ConfigurationError(ValueError):
    """Invalid run configuration (bad parameter combination, stability bound)."""


class ResolutionError(ConfigurationError):
    """Requested feature is not resolvable on the given grid."""


class IntegrationError(RuntimeError):
    """Numerical integration failed; carries the step (and path) where it did."""

    def __init__(self, message: str, step: int | None = None, path: int | None = None):
        if step is not None:
            message = f"{message} (step {step}" + (f", path {path})" if path is not None else ")")
        super().__init__(message)
        self.step = step
        self.path = path


class SchemeFailureError(RuntimeError):
    """A PDE scheme produced values outside its contract (e.g. negative density)."""


class InsufficientDataError(RuntimeError):
    """Too few samples to run a statistical procedure."""
