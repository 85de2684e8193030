"""Marginal proportional cause-specific hazards for clustered competing risks
with causes missing at random."""

from ._core import (
    DataError,
    Dataset,
    DomainError,
    Error,
    Model,
    NoConvergence,
    SingularMatrix,
    fit,
    gof,
    simulate,
)

__all__ = [
    "DataError",
    "Dataset",
    "DomainError",
    "Error",
    "Model",
    "NoConvergence",
    "SingularMatrix",
    "fit",
    "gof",
    "simulate",
]
