"""Malliavin derivative D_r X_s of the solution on the grid.

Every field built here is rank one above the diagonal,
``D_{t_i} X_{t_j} = row[i] * col[j]`` for ``i <= j`` and zero below, so it
is stored through its two factors. ``matrix`` materialises the dense
(N+1) x (N+1) array when a caller asks for it.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from ._validation import DomainError, SolverError
from .fbm import FbmPath, TimeGrid
from .sde import Coefficients, DossModel, FbmModel, FouModel, SolutionPath

__all__ = [
    "DerivativeField",
    "first_variation",
    "first_variation_values",
    "derivative_field",
    "derivative_field_exact",
    "MAX_DENSE_STEPS",
]

#: dense materialisation refuses grids finer than this unless overridden
MAX_DENSE_STEPS = 4096


@dataclass
class DerivativeField:
    """``d[i][j] = row[i] * col[j]`` for i <= j, zero otherwise.

    The diagonal carries the r -> s limit, sigma(X_{t_i}).
    """

    grid: TimeGrid
    row: np.ndarray = field(repr=False)
    col: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.row = np.asarray(self.row, dtype=float)
        self.col = np.asarray(self.col, dtype=float)
        if self.row.shape[-1] != len(self.grid) or self.col.shape[-1] != len(self.grid):
            raise DomainError("derivative field factors do not match the grid")
        if not (np.all(np.isfinite(self.row)) and np.all(np.isfinite(self.col))):
            raise SolverError("derivative field has non-finite entries")

    @property
    def diagonal(self) -> np.ndarray:
        return self.row * self.col

    def matrix(self, max_steps: int = MAX_DENSE_STEPS) -> np.ndarray:
        if self.grid.steps > max_steps:
            raise DomainError(f"dense field capped at N={max_steps}; got N={self.grid.steps}")
        return np.triu(np.multiply.outer(self.row, self.col))

    @cached_property
    def d(self) -> np.ndarray:
        return self.matrix()

    def write_csv(self, fh) -> None:
        """Debug dump, header ``r_index,s_index,value``, row-major."""
        d = self.d
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["r_index", "s_index", "value"])
        for i in range(d.shape[0]):
            for j in range(d.shape[1]):
                writer.writerow([i, j, format(d[i, j], ".17g")])


def first_variation_values(coeffs: Coefficients, x: np.ndarray, driver: np.ndarray, dt: float) -> np.ndarray:
    """J_s = exp(sum b'(X) dt + sum sigma'(X) dB), left-point sums on the grid."""
    x = np.asarray(x, dtype=float)
    db = np.diff(np.asarray(driver, dtype=float), axis=-1)
    expo = coeffs.b_prime(x[..., :-1]) * dt + coeffs.sigma_prime(x[..., :-1]) * db
    log_j = np.zeros(x.shape)
    np.cumsum(expo, axis=-1, out=log_j[..., 1:])
    with np.errstate(over="ignore"):
        j = np.exp(log_j)
    if not np.all(np.isfinite(j)) or np.any(j == 0):
        bad = np.argwhere(~np.isfinite(j) | (j == 0))[0]
        raise SolverError(f"first variation overflow at step {bad[-1]}")
    return j


def _path_and_driver(x, driver) -> tuple[TimeGrid, np.ndarray, np.ndarray]:
    if not isinstance(x, SolutionPath) or not isinstance(driver, FbmPath):
        raise DomainError("expected a SolutionPath and an FbmPath")
    if x.grid != driver.grid:
        raise DomainError("solution and driver live on different grids")
    return x.grid, x.values, driver.values


def first_variation(coeffs: Coefficients, x: SolutionPath, driver: FbmPath) -> np.ndarray:
    grid, xv, bv = _path_and_driver(x, driver)
    return first_variation_values(coeffs, xv, bv, grid.dt)


def derivative_field(coeffs: Coefficients, x: SolutionPath, driver: FbmPath) -> DerivativeField:
    """D_r X_s = sigma(X_r) J_s / J_r from the first variation."""
    grid, xv, bv = _path_and_driver(x, driver)
    j = first_variation_values(coeffs, xv, bv, grid.dt)
    return DerivativeField(grid, coeffs.sigma(xv) / j, j)


def derivative_field_exact(model, x: SolutionPath) -> DerivativeField:
    """Closed-form fields for the fBm, fractional OU and Doss models."""
    grid = x.grid
    t = grid.nodes
    if isinstance(model, FbmModel):
        return DerivativeField(grid, np.ones_like(t), np.ones_like(t))
    if isinstance(model, FouModel):
        # nu e^{-(s-r)} = (nu e^{r}) e^{-s}
        return DerivativeField(grid, model.nu * np.exp(t), np.exp(-t))
    if isinstance(model, DossModel):
        return DerivativeField(grid, np.ones_like(t), model.sigma(x.values))
    raise DomainError(f"no closed-form derivative field for {type(model).__name__}")


def exact_factors(model, x: np.ndarray, grid: TimeGrid) -> tuple[np.ndarray, np.ndarray]:
    """Array version of :func:`derivative_field_exact` (leading axes on ``x``)."""
    t = grid.nodes
    if isinstance(model, FbmModel):
        one = np.ones(np.shape(x))
        return one, one
    if isinstance(model, FouModel):
        return np.broadcast_to(model.nu * np.exp(t), np.shape(x)), np.broadcast_to(np.exp(-t), np.shape(x))
    if isinstance(model, DossModel):
        return np.ones(np.shape(x)), model.sigma(x)
    raise DomainError(f"no closed-form derivative field for {type(model).__name__}")
