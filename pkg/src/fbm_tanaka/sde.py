"""Pathwise solvers for dX = b(X) dt + sigma(X) dB^H.

``solve_euler`` is the generic left-point Euler-Young scheme. The model
classes below also carry closed-form solvers: an exponential
integrating-factor scheme for the fractional Ornstein-Uhlenbeck process
and the Doss-Sussmann transform for pure-diffusion equations.

Array helpers (``*_values``) take driver node values with arbitrary leading
axes and are what the ensemble code calls; the public functions wrap them
for single :class:`FbmPath` objects.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.polynomial.legendre import leggauss

from ._validation import DomainError, SolverError
from .fbm import FbmPath, TimeGrid

__all__ = [
    "Coefficients",
    "FbmModel",
    "FouModel",
    "DossModel",
    "CustomModel",
    "SolutionPath",
    "solve_euler",
    "solve_fou",
    "solve_doss",
    "solve_model",
    "holder_estimate",
]

Scalar = Callable[[np.ndarray], np.ndarray]


def _const(c: float) -> Scalar:
    return lambda x: np.full(np.shape(x), float(c))


@dataclass(frozen=True)
class Coefficients:
    """Drift ``b``, diffusion ``sigma`` and their derivatives (vectorised)."""

    b: Scalar
    b_prime: Scalar
    sigma: Scalar
    sigma_prime: Scalar

    @classmethod
    def constant(cls, b: float = 0.0, sigma: float = 1.0) -> "Coefficients":
        return cls(_const(b), _const(0.0), _const(sigma), _const(0.0))


@dataclass
class SolutionPath:
    grid: TimeGrid
    values: np.ndarray = field(repr=False)
    x0: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (len(self.grid),):
            raise DomainError("solution values do not match the grid")
        if not np.all(np.isfinite(self.values)):
            raise SolverError("solution path contains non-finite values")
        if self.values[0] != self.x0:
            raise DomainError("solution path must start at x0")


# -- models -----------------------------------------------------------------


@dataclass(frozen=True)
class FbmModel:
    """b = 0, sigma = 1: the solution is the driver itself (shifted by x0)."""

    name = "fbm"

    def coefficients(self) -> Coefficients:
        return Coefficients.constant(0.0, 1.0)

    def solve_values(self, x0, driver: np.ndarray, grid: TimeGrid) -> np.ndarray:
        return x0 + driver


@dataclass(frozen=True)
class FouModel:
    """Fractional Ornstein-Uhlenbeck: b(x) = -x, sigma = nu."""

    nu: float = 1.0
    name = "fou"

    def coefficients(self) -> Coefficients:
        return Coefficients(lambda x: -np.asarray(x, dtype=float), _const(-1.0), _const(self.nu), _const(0.0))

    def solve_values(self, x0, driver, grid):
        return fou_values(self.nu, x0, driver, grid)


@dataclass(frozen=True)
class CustomModel:
    coeffs: Coefficients
    name = "custom"

    def coefficients(self) -> Coefficients:
        return self.coeffs

    def solve_values(self, x0, driver, grid):
        return euler_values(self.coeffs, x0, driver, grid)


class DossModel:
    """dX = sigma(X) dB^H solved by X_t = Lambda^{-1}(B_t + Lambda(x0)).

    ``Lambda(x) = int_0^x dy / sigma(y)`` is evaluated from a lazily extended
    table of 16-point Gauss-Legendre panels; pass ``Lambda`` explicitly when a
    closed form is known. ``sigma`` must be bounded away from zero.
    """

    name = "doss"
    _panel = 0.25

    def __init__(self, sigma: Scalar, sigma_prime: Scalar, Lambda: Scalar | None = None, tol: float = 1e-12):
        self.sigma = sigma
        self.sigma_prime = sigma_prime
        self.tol = tol
        self._closed = Lambda
        self._gl = leggauss(16)
        self._edges = np.zeros(1)
        self._cum = np.zeros(1)
        self._lock = threading.Lock()

    @classmethod
    def sine(cls, closed_form: bool = True) -> "DossModel":
        """sigma(x) = 2 + sin(x), the running non-Gaussian example."""
        return cls(lambda x: 2.0 + np.sin(x), np.cos, Lambda=_sine_lambda if closed_form else None)

    def coefficients(self) -> Coefficients:
        return Coefficients(_const(0.0), _const(0.0), self.sigma, self.sigma_prime)

    def _panel_integral(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        nodes, wts = self._gl
        mid = 0.5 * (a + b)
        half = 0.5 * (b - a)
        y = mid[..., None] + half[..., None] * nodes
        return half * np.sum(wts / self.sigma(y), axis=-1)

    def _extend(self, lo: float, hi: float) -> None:
        step = self._panel
        while self._edges[0] > lo:
            a = self._edges[0]
            new = a - step * np.arange(1, 65)[::-1]
            vals = self._panel_integral(new, np.append(new[1:], a))
            self._edges = np.concatenate([new, self._edges])
            self._cum = np.concatenate([self._cum[0] - np.cumsum(vals[::-1])[::-1], self._cum])
        while self._edges[-1] < hi:
            b = self._edges[-1]
            new = b + step * np.arange(1, 65)
            vals = self._panel_integral(np.concatenate([[b], new[:-1]]), new)
            self._edges = np.concatenate([self._edges, new])
            self._cum = np.concatenate([self._cum, self._cum[-1] + np.cumsum(vals)])

    def Lambda(self, x):
        x = np.asarray(x, dtype=float)
        if self._closed is not None:
            return self._closed(x)
        if not np.all(np.isfinite(x)):
            raise SolverError("Lambda evaluated at a non-finite point")
        with self._lock:
            if x.size:
                self._extend(float(x.min()), float(x.max()))
            edges, cum = self._edges, self._cum
        k = np.clip(np.searchsorted(edges, x, side="right") - 1, 0, edges.size - 1)
        return cum[k] + self._panel_integral(edges[k], x)

    def Lambda_inverse(self, y, guess=None):
        """Safeguarded Newton with a geometrically expanded bracket."""
        y = np.asarray(y, dtype=float)
        x = np.zeros_like(y) if guess is None else np.array(np.broadcast_to(guess, y.shape), dtype=float)
        lo = x.copy()
        hi = x.copy()
        step = np.ones_like(y)
        for _ in range(200):
            f_lo = self.Lambda(lo) - y
            f_hi = self.Lambda(hi) - y
            need_lo = f_lo > 0
            need_hi = f_hi < 0
            if not (need_lo.any() or need_hi.any()):
                break
            lo = np.where(need_lo, lo - step, lo)
            hi = np.where(need_hi, hi + step, hi)
            step *= 2.0
        else:
            raise SolverError("could not bracket Lambda^{-1}; is sigma bounded away from zero?")
        x = np.clip(x, lo, hi)
        for _ in range(100):
            fx = self.Lambda(x) - y
            done = np.abs(fx) <= self.tol
            if done.all():
                return x
            lo = np.where(fx < 0, x, lo)
            hi = np.where(fx > 0, x, hi)
            newton = x - fx * self.sigma(x)
            bad = ~((newton > lo) & (newton < hi))
            x = np.where(done, x, np.where(bad, 0.5 * (lo + hi), newton))
        fx = self.Lambda(x) - y
        if np.any(np.abs(fx) > self.tol):
            raise SolverError(f"Lambda^{{-1}} did not converge (residual {np.abs(fx).max():.2e})")
        return x

    def solve_values(self, x0, driver, grid):
        driver = np.asarray(driver, dtype=float)
        lam0 = self.Lambda(np.asarray(x0, dtype=float))
        target = driver + lam0
        s0 = self.sigma(np.asarray(x0, dtype=float))
        out = self.Lambda_inverse(target, guess=x0 + s0 * driver)
        out[..., 0] = x0
        return out


_SQ3 = math.sqrt(3.0)


def _sine_lambda(x):
    # int_0^x dy / (2 + sin y), unwrapped across periods of length 2 pi / sqrt 3
    x = np.asarray(x, dtype=float)
    k = np.round(x / (2.0 * math.pi))
    r = x - 2.0 * math.pi * k
    with np.errstate(over="ignore", divide="ignore"):
        part = (2.0 / _SQ3) * (np.arctan((2.0 * np.tan(0.5 * r) + 1.0) / _SQ3) - math.pi / 6.0)
    return k * (2.0 * math.pi / _SQ3) + part


# -- array-level solvers -------------------------------------------------------


def euler_values(coeffs: Coefficients, x0, driver: np.ndarray, grid: TimeGrid) -> np.ndarray:
    """X_{i+1} = X_i + b(X_i) dt + sigma(X_i) (B_{i+1} - B_i)."""
    driver = np.asarray(driver, dtype=float)
    db = np.diff(driver, axis=-1)
    dt = grid.dt
    out = np.empty(driver.shape)
    out[..., 0] = x0
    x = out[..., 0]
    with np.errstate(all="ignore"):
        for i in range(db.shape[-1]):
            x = x + coeffs.b(x) * dt + coeffs.sigma(x) * db[..., i]
            if not np.all(np.isfinite(x)):
                raise SolverError(f"non-finite state at step {i + 1}")
            out[..., i + 1] = x
    return out


def fou_values(nu: float, x0, driver: np.ndarray, grid: TimeGrid) -> np.ndarray:
    """Integrating-factor scheme, exact for a driver linear within each step.

    X_{i+1} = e^{-dt} X_i + nu (1 - e^{-dt}) / dt * (B_{i+1} - B_i)
    """
    driver = np.asarray(driver, dtype=float)
    db = np.diff(driver, axis=-1)
    dt = grid.dt
    decay = math.exp(-dt)
    gain = nu * (-math.expm1(-dt)) / dt
    out = np.empty(driver.shape)
    out[..., 0] = x0
    x = out[..., 0]
    for i in range(db.shape[-1]):
        x = decay * x + gain * db[..., i]
        out[..., i + 1] = x
    return out


# -- public single-path API --------------------------------------------------------


def _driver(driver) -> tuple[TimeGrid, np.ndarray]:
    if isinstance(driver, FbmPath):
        return driver.grid, driver.values
    raise DomainError("driver must be an FbmPath")


def solve_euler(coeffs: Coefficients, x0: float, driver: FbmPath) -> SolutionPath:
    grid, b = _driver(driver)
    return SolutionPath(grid, euler_values(coeffs, float(x0), b, grid), float(x0))


def solve_fou(nu: float, x0: float, driver: FbmPath) -> SolutionPath:
    grid, b = _driver(driver)
    return SolutionPath(grid, fou_values(nu, float(x0), b, grid), float(x0))


def solve_doss(model: DossModel, x0: float, driver: FbmPath) -> SolutionPath:
    grid, b = _driver(driver)
    return SolutionPath(grid, model.solve_values(float(x0), b, grid), float(x0))


def solve_model(model, x0: float, driver: FbmPath) -> SolutionPath:
    grid, b = _driver(driver)
    return SolutionPath(grid, model.solve_values(float(x0), b, grid), float(x0))


def holder_estimate(path) -> float:
    """Empirical Hoelder exponent of a sampled path.

    Least-squares slope of log(max |X_{i+l} - X_i|) against log(l dt) over
    dyadic lags l. Lags are kept while the path holds at least 32 disjoint
    windows of that length (at least the two shortest lags are always
    used); coarser lags are dominated by the sqrt(log(N/l)) growth of the
    maximum and bias the slope down. A constant path returns ``math.inf``.
    """
    values = np.asarray(path.values, dtype=float)
    grid = path.grid
    if grid.steps < 2:
        raise DomainError("need at least two steps")
    top = max(int(math.log2(grid.steps)) - 5, 2)
    lags = 2 ** np.arange(top)
    incs = np.array([np.max(np.abs(values[l:] - values[:-l])) for l in lags])
    if np.all(incs == 0):
        return math.inf
    keep = incs > 0
    slope = np.polyfit(np.log(lags[keep] * grid.dt), np.log(incs[keep]), 1)[0]
    return float(slope)
