"""Nonholonomic mechanics on foliated charts: constraints, semisprays and curvature."""

from .errors import (
    ConfigError, Degenerate, DomainError, ExprError, ExprSyntaxError, NoConvergence,
    NonholoError, NonFinite, SimulationError, SingularityReached, SingularJacobian,
    TimeDependentInput, UnboundNameError, WrongKind, WrongTimeFlags,
)
from .model import (
    ChartDims, ConstraintKind, ConstraintMap, Jet, LagrangianField, LegendreCovector,
    TransState, constrained_lagrangian, constraint_velocity, legendre, lift_affine,
    lift_linear, validate_kind,
)
from .scalar import Jet2

__version__ = "0.1.0"
