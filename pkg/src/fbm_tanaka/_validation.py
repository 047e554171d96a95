"""Exceptions and small input checks shared by every module."""

import numpy as np


class DomainError(ValueError):
    """An argument lies outside the domain of an operation."""


class SolverError(RuntimeError):
    """A numerical routine failed (non-finite state, overflow, no bracket)."""


def check_finite(values, what: str) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(values)):
        raise DomainError(f"{what} contains non-finite entries")
    return values


def check_same_length(a, b, what: str = "inputs") -> None:
    if np.shape(a)[-1] != np.shape(b)[-1]:
        raise DomainError(
            f"{what} live on different grids: {np.shape(a)} vs {np.shape(b)}"
        )


def sgn(u):
    """Sign with sgn(0) = 0."""
    return np.sign(u)
