"""Exception types shared across the package."""


class DcmpcError(Exception):
    """Base class for all package errors."""


class DomainError(DcmpcError, ValueError):
    """An argument is outside the mathematical domain of an operation."""


class UsageError(DcmpcError, ValueError):
    """An API contract was violated (misaligned lengths, bad indices, ...)."""


class QueueInstabilityError(DcmpcError, ValueError):
    """Offered load meets or exceeds service capacity (m * mu <= L)."""


class PreconditionError(DcmpcError, ValueError):
    """A structural precondition of the convex reformulation fails."""


class InfeasibleError(DcmpcError, RuntimeError):
    """No point satisfies the constraints of an optimization problem."""

    def __init__(self, message: str, tau: int | None = None, minimax: float | None = None):
        super().__init__(message)
        self.tau = tau
        self.minimax = minimax


class ConfigError(DcmpcError, ValueError):
    """A run configuration file is missing, malformed, or inconsistent."""
