"""Integration kernels on a uniform grid.

Integrands are frozen at the lower-left node of each cell while the
singular kernel is integrated exactly over the cell (product
integration). On a uniform grid the exact cell weights depend only on the
lag between cells, so they are stored as a Toeplitz vector.
"""

from __future__ import annotations

import functools
import math

import numpy as np
from scipy import fft as sp_fft
from scipy.special import binom

from ._validation import DomainError
from .fbm import TimeGrid, as_hurst

__all__ = [
    "KernelWeights",
    "lag_weights",
    "kernel_cell_weight",
    "rs_integral",
    "singular_double_integral",
    "causal_pair_sum",
    "fractional_norm",
    "default_beta",
]

_SERIES_FROM = 8
_SERIES_TERMS = 14


@functools.lru_cache(maxsize=32)
def _unit_lag_weights(q: float, n: int) -> np.ndarray:
    """Second differences of |u|^q / (q(q-1)) at integer lags 0..n-1.

    Large lags use the even binomial series of (1+x)^q + (1-x)^q - 2 with
    x = 1/k; the direct difference loses ~log10(k) digits to cancellation.
    """
    k = np.arange(n, dtype=float)
    c = q * (q - 1.0)
    out = ((k + 1.0) ** q - 2.0 * k**q + np.abs(k - 1.0) ** q) / c
    big = k >= _SERIES_FROM
    if np.any(big):
        kb = k[big]
        x2 = 1.0 / (kb * kb)
        acc = np.zeros_like(kb)
        # sum from the smallest term up
        for m in range(_SERIES_TERMS, 0, -1):
            acc += binom(q, 2 * m) * x2**m
        out[big] = 2.0 * kb**q * acc / c
    out.setflags(write=False)
    return out


def lag_weights(q: float, grid: TimeGrid) -> np.ndarray:
    """Exact cell weights of the kernel |s-r|^{q-2} for lags 0..N-1."""
    return grid.dt**q * _unit_lag_weights(float(q), grid.steps)


class KernelWeights:
    """Exact integrals of |s-r|^{2H-2} over every pair of grid cells.

    ``lags[k]`` is the weight of two cells ``k`` steps apart; ``matrix``
    materialises the symmetric N x N array on demand.
    """

    def __init__(self, grid: TimeGrid, h):
        self.grid = grid
        self.h = as_hurst(h)
        self.lags = lag_weights(2.0 * self.h.h, grid)
        self._spectra = {}

    @property
    def matrix(self) -> np.ndarray:
        idx = np.arange(self.grid.steps)
        return self.lags[np.abs(idx[:, None] - idx[None, :])]

    @property
    def w(self) -> np.ndarray:
        return self.matrix

    def total(self) -> float:
        n = self.grid.steps
        k = np.arange(1, n)
        return math.fsum(np.concatenate([[n * self.lags[0]], 2.0 * (n - k) * self.lags[1:]]))

    def expected_total(self) -> float:
        return self.grid.horizon ** (2 * self.h.h) / self.h.alpha

    def causal_spectrum(self, size: int) -> np.ndarray:
        # lag weights with the diagonal halved: only r <= s inside a diagonal cell
        if size not in self._spectra:
            kern = self.lags.copy()
            kern[0] *= 0.5
            self._spectra[size] = sp_fft.rfft(kern, size)
        return self._spectra[size]


def kernel_cell_weight(a1, b1, a2, b2, h) -> float:
    """Exact integral of |s-r|^{2H-2} over [a1,b1] x [a2,b2]."""
    hp = as_hurst(h)
    if not (a1 <= b1 and a2 <= b2):
        raise DomainError("cell bounds must satisfy a <= b")
    if b1 == a1 or b2 == a2:
        return 0.0
    p = 2.0 * hp.h

    def phi(u):
        return abs(u) ** p / (p * (p - 1.0))

    return -phi(b2 - b1) + phi(a2 - b1) + phi(b2 - a1) - phi(a2 - a1)


def rs_integral(g, driver):
    """Left-point Riemann-Stieltjes sum of ``g`` against ``driver``.

    ``driver`` holds node values (length N+1); ``g`` holds node values of the
    integrand (length N+1, last ignored, or N). Leading axes broadcast.
    """
    driver = np.asarray(driver, dtype=float)
    g = np.asarray(g, dtype=float)
    n = driver.shape[-1] - 1
    if g.shape[-1] == n + 1:
        g = g[..., :n]
    elif g.shape[-1] != n:
        raise DomainError(f"integrand length {g.shape[-1]} does not match driver length {n + 1}")
    out = np.sum(g * np.diff(driver, axis=-1), axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def singular_double_integral(F, weights: KernelWeights, triangular: bool = False) -> float:
    """Sum of ``F[r, s] * w[r, s]`` over cells (rows r, columns s).

    ``F`` holds cell values at lower-left nodes, shape (N, N) or (N+1, N+1).
    With ``triangular=True`` the integrand is understood to vanish for
    r > s: strictly lower cells are dropped and each diagonal cell keeps the
    half of its kernel mass lying in r <= s.
    """
    F = np.asarray(F, dtype=float)
    n = weights.grid.steps
    if F.shape == (n + 1, n + 1):
        F = F[:n, :n]
    if F.shape != (n, n):
        raise DomainError(f"field shape {F.shape} does not match {n}-step kernel weights")
    w = weights.matrix
    if triangular:
        w = np.triu(w)
        w[np.diag_indices(n)] *= 0.5
    return float(np.sum(F * w))


def causal_pair_sum(u, v, weights: KernelWeights):
    """``sum_{i<=j} u_i v_j w_{j-i}`` with the diagonal weight halved.

    Equivalent to ``singular_double_integral(outer(u, v), weights,
    triangular=True)`` but O(N log N); leading axes broadcast. Inputs of
    length N+1 drop their last entry.
    """
    n = weights.grid.steps
    u = _cell_values(u, n)
    v = _cell_values(v, n)
    size = sp_fft.next_fast_len(2 * n - 1, real=True)
    conv = sp_fft.irfft(sp_fft.rfft(u, size, axis=-1) * weights.causal_spectrum(size), size, axis=-1)
    out = np.sum(conv[..., :n] * v, axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def _cell_values(a, n: int) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.shape[-1] == n + 1:
        return a[..., :n]
    if a.shape[-1] != n:
        raise DomainError(f"vector of length {a.shape[-1]} does not live on a {n}-step grid")
    return a


def default_beta(h) -> float:
    """(1-H) + 0.1 (2H-1), inside (1-H, H) for every H in (1/2, 1)."""
    h = as_hurst(h).h
    return (1.0 - h) + 0.1 * (2.0 * h - 1.0)


def fractional_norm(g, beta: float, grid: TimeGrid):
    """int |g(s)| s^-beta ds + double int |g(t)-g(s)| |t-s|^{-1-beta} ds dt.

    ``g`` holds node values (length N+1, last ignored, or N) and is treated
    as constant on each cell; the singular factors are integrated exactly
    per cell. Leading axes broadcast.
    """
    if not 0.0 < beta < 1.0:
        raise DomainError(f"beta must lie in (0, 1), got {beta!r}")
    n = grid.steps
    g = _cell_values(g, n)
    q = 1.0 - beta
    t = grid.nodes
    first = np.sum(np.abs(g) * np.diff(t**q) / q, axis=-1)
    w = lag_weights(q, grid)
    second = np.zeros(g.shape[:-1])
    for k in range(1, n):
        second = second + w[k] * np.sum(np.abs(g[..., k:] - g[..., :-k]), axis=-1)
    out = first + 2.0 * second
    return float(out) if np.ndim(out) == 0 else out

