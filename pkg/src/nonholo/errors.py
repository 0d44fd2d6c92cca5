"""Exception types shared across the package."""


class NonholoError(Exception):
    """Base class for errors raised by this package."""


class DomainError(NonholoError, ValueError):
    """A function was evaluated outside the domain where it is smooth."""


class ExprError(NonholoError):
    """Problem with an expression (syntax, unknown name, unbound variable)."""


class ExprSyntaxError(ExprError):
    def __init__(self, message: str, offset: int, source: str = ""):
        self.offset = offset
        self.source = source
        super().__init__(f"{message} at offset {offset}")


class UnboundNameError(ExprError, KeyError):
    def __str__(self) -> str:  # KeyError would repr() the message
        return str(self.args[0])


class WrongKind(NonholoError):
    """An operation needs a linear or affine constraint and got another kind."""


class TimeDependentInput(NonholoError):
    """A time-independent formula was called on time-dependent data."""


class WrongTimeFlags(NonholoError):
    """The time-dependence flags of the Lagrangian and constraint do not fit."""


class SingularJacobian(NonholoError):
    """The leaf-velocity Jacobian of an implicit constraint is (near) singular."""


class NoConvergence(NonholoError):
    """Newton iteration for an implicit constraint did not converge."""


class Degenerate(NonholoError):
    """The bilinear form h is singular or badly conditioned."""

    def __init__(self, message: str, cond: float = float("inf")):
        self.cond = cond
        super().__init__(message)


class SimulationError(NonholoError):
    """Integration stopped early; ``partial`` holds the trajectory so far."""

    partial = None


class SingularityReached(SimulationError):
    """The trajectory reached a point where the constraint is not smooth."""


class NonFinite(SimulationError):
    """The integrator produced a non-finite state."""


class ConfigError(NonholoError):
    """A scenario file or run configuration is invalid."""
