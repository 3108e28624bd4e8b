"""Entropy trip distribution, Wardrop equilibria and logit-imitation dynamics."""

from .errors import (DimensionMismatch, DomainError, InfeasibleFlow, InfeasibleMarginals,
                     NonConvergence, NoRouteForOD, ParseError, PreconditionError,
                     RouteExplosion, StateSpaceTooLarge, Unattainable, WardropLabError)

__version__ = "0.1.0"

__all__ = [
    "DimensionMismatch", "DomainError", "InfeasibleFlow", "InfeasibleMarginals", "NonConvergence",
    "NoRouteForOD", "ParseError", "PreconditionError", "RouteExplosion", "StateSpaceTooLarge",
    "Unattainable", "WardropLabError",
]
