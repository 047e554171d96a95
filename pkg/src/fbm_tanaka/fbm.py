"""Exact sampling of fractional Brownian motion on a uniform grid.

Paths are built from fractional Gaussian noise (the stationary increment
sequence) by cumulative summation. Two exact samplers are offered: a
circulant embedding (Davies-Harte) and a dense Cholesky factorisation.

Every path is driven by its own counter-based Philox stream keyed by
``(seed, path_index)``, so a given path is reproducible no matter how the
index range is split across workers.
"""

from __future__ import annotations

import csv
import functools
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import fft as sp_fft

from ._validation import DomainError, check_finite

__all__ = [
    "HurstParam",
    "TimeGrid",
    "FbmPath",
    "CirculantError",
    "as_hurst",
    "covariance",
    "fgn_autocovariance",
    "path_rng",
    "sample_fbm",
    "sample_fbm_array",
    "inner_product_H",
    "write_paths_csv",
]

#: relative threshold below which a negative circulant eigenvalue is an error
CIRCULANT_TOL = 1e-10


class CirculantError(RuntimeError):
    """The circulant embedding produced a materially negative eigenvalue."""


@dataclass(frozen=True)
class HurstParam:
    """Hurst index with ``1/2 < h < 1``.

    ``h = 1/2`` (standard Brownian motion) is accepted only when
    ``allow_half=True``; it exists for oracle tests.
    """

    h: float
    allow_half: bool = False

    def __post_init__(self):
        h = float(self.h)
        ok = 0.5 < h < 1.0 or (self.allow_half and h == 0.5)
        if not ok:
            raise DomainError(
                f"Hurst parameter must lie in (1/2, 1), got {self.h!r}"
            )
        object.__setattr__(self, "h", h)

    @property
    def alpha(self) -> float:
        """The constant H(2H-1) in front of the |t-s|^{2H-2} kernel."""
        return self.h * (2.0 * self.h - 1.0)

    def __float__(self) -> float:
        return self.h


def as_hurst(h, allow_half: bool = False) -> HurstParam:
    if isinstance(h, HurstParam):
        if h.h == 0.5 and not allow_half:
            raise DomainError("h = 1/2 is only accepted by the samplers")
        return h
    return HurstParam(h, allow_half=allow_half)


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t_i = i * T / N`` on ``[0, T]``."""

    horizon: float
    steps: int

    def __post_init__(self):
        if not (np.isfinite(self.horizon) and self.horizon > 0):
            raise DomainError(f"horizon must be positive, got {self.horizon!r}")
        if int(self.steps) != self.steps or self.steps < 1:
            raise DomainError(f"steps must be a positive integer, got {self.steps!r}")
        object.__setattr__(self, "horizon", float(self.horizon))
        object.__setattr__(self, "steps", int(self.steps))

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    @property
    def nodes(self) -> np.ndarray:
        # i * T / N rather than i * dt keeps t_N == T exactly
        return np.arange(self.steps + 1) * self.horizon / self.steps

    def __len__(self) -> int:
        return self.steps + 1

    def coarsen(self, factor: int) -> "TimeGrid":
        if self.steps % factor:
            raise DomainError(f"{factor} does not divide {self.steps} steps")
        return TimeGrid(self.horizon, self.steps // factor)

    def index_of(self, t: float) -> int:
        """Index of the node equal to ``t`` (must be a grid node)."""
        i = int(round(t / self.dt))
        if i < 0 or i > self.steps or not np.isclose(i * self.dt, t, rtol=0, atol=1e-12 * self.horizon):
            raise DomainError(f"t={t} is not a node of {self}")
        return i


@dataclass
class FbmPath:
    grid: TimeGrid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (len(self.grid),):
            raise DomainError(
                f"path has {self.values.shape} values, grid needs {len(self.grid)}"
            )
        check_finite(self.values, "fBm path")
        if self.values[0] != 0.0:
            raise DomainError("fBm paths start at 0")

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.values)


def covariance(t, s, h) -> np.ndarray | float:
    """Covariance R(t, s) = (t^{2H} + s^{2H} - |t-s|^{2H}) / 2 of B^H."""
    h = as_hurst(h, allow_half=True).h
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    if np.any(t < 0) or np.any(s < 0):
        raise DomainError("covariance is defined for nonnegative times only")
    p = 2.0 * h
    out = 0.5 * (t**p + s**p - np.abs(t - s) ** p)
    return float(out) if out.ndim == 0 else out


def fgn_autocovariance(h: float, lags: int) -> np.ndarray:
    """Autocovariance of unit-step fGn at lags 0..lags-1."""
    k = np.arange(lags, dtype=float)
    p = 2.0 * h
    return 0.5 * ((k + 1.0) ** p - 2.0 * k**p + np.abs(k - 1.0) ** p)


@functools.lru_cache(maxsize=16)
def _circulant_sqrt_eigs(h: float, n: int) -> np.ndarray:
    gamma = fgn_autocovariance(h, n + 1)
    row = np.concatenate([gamma, gamma[-2:0:-1]])
    eigs = sp_fft.fft(row).real
    top = eigs.max()
    if eigs.min() < -CIRCULANT_TOL * top:
        raise CirculantError(
            f"circulant embedding for H={h}, N={n} has eigenvalue "
            f"{eigs.min():.3e} (max {top:.3e})"
        )
    eigs = np.clip(eigs, 0.0, None)
    out = np.sqrt(eigs / row.size)
    out.setflags(write=False)
    return out


@functools.lru_cache(maxsize=8)
def _fgn_cholesky(h: float, n: int) -> np.ndarray:
    gamma = fgn_autocovariance(h, n)
    idx = np.arange(n)
    cov = gamma[np.abs(idx[:, None] - idx[None, :])]
    low = np.linalg.cholesky(cov)
    low.setflags(write=False)
    return low


def path_rng(seed: int, index: int) -> np.random.Generator:
    """Counter-based stream for one path; draws are indexed by the counter."""
    key = np.array([seed & 0xFFFFFFFFFFFFFFFF, index], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _normals(seed: int, start: int, count: int, size: int) -> np.ndarray:
    out = np.empty((count, size))
    for row in range(count):
        out[row] = path_rng(seed, start + row).standard_normal(size)
    return out


def sample_fbm_array(
    grid: TimeGrid,
    h,
    count: int,
    seed: int,
    method: str = "circulant",
    start: int = 0,
    fallback: bool = False,
) -> np.ndarray:
    """Sample paths ``start .. start+count-1`` as an array of shape (count, N+1).

    With ``fallback=True`` a failing circulant embedding silently switches
    to the Cholesky sampler; otherwise :class:`CirculantError` propagates.
    """
    h = as_hurst(h, allow_half=True).h
    if count < 0:
        raise DomainError("count must be nonnegative")
    n = grid.steps
    if count == 0:
        return np.empty((0, n + 1))
    if method == "circulant":
        try:
            root = _circulant_sqrt_eigs(h, n)
        except CirculantError:
            if not fallback:
                raise
            method = "cholesky"
    if method == "circulant":
        m = root.size
        z = _normals(seed, start, count, 2 * m)
        w = root * (z[:, :m] + 1j * z[:, m:])
        fgn = sp_fft.fft(w, axis=-1).real[:, :n]
    elif method == "cholesky":
        z = _normals(seed, start, count, n)
        fgn = z @ _fgn_cholesky(h, n).T
    else:
        raise DomainError(f"unknown sampling method {method!r}")
    out = np.zeros((count, n + 1))
    np.cumsum(fgn * grid.dt**h, axis=1, out=out[:, 1:])
    return out


def sample_fbm(
    grid: TimeGrid,
    h,
    count: int,
    seed: int,
    method: str = "circulant",
    fallback: bool = False,
) -> list[FbmPath]:
    """Exact fBm samples on ``grid``; path ``k`` depends only on ``(seed, k)``."""
    arr = sample_fbm_array(grid, h, count, seed, method=method, fallback=fallback)
    return [FbmPath(grid, row) for row in arr]


def inner_product_H(phi1, phi2, h, grid: TimeGrid | None = None, weights=None) -> float:
    """alpha_H times the double integral of phi1(t) phi2(s) |t-s|^{2H-2}.

    ``phi1`` and ``phi2`` hold left-node values of step functions on the grid
    (length N, or N+1 with the last value ignored). Each cell pair is weighted
    by the exact integral of the kernel over that rectangle.
    """
    from .quad import KernelWeights

    hp = as_hurst(h)
    if weights is None:
        if grid is None:
            raise DomainError("inner_product_H needs a grid or kernel weights")
        weights = KernelWeights(grid, hp)
    n = weights.grid.steps
    a = _cells(phi1, n)
    b = _cells(phi2, n)
    return float(hp.alpha * (a @ weights.matrix @ b))


def _cells(phi, n: int) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    if phi.shape == (n + 1,):
        return phi[:-1]
    if phi.shape != (n,):
        raise DomainError(f"vector of shape {phi.shape} does not live on a {n}-step grid")
    return phi


def write_paths_csv(fh, grid: TimeGrid, values: np.ndarray | Sequence[FbmPath]) -> None:
    """CSV with header ``t,path_0,...`` and one row per grid node."""
    if not isinstance(values, np.ndarray):
        values = np.array([p.values for p in values])
    values = np.atleast_2d(values)
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["t"] + [f"path_{k}" for k in range(values.shape[0])])
    for i, t in enumerate(grid.nodes):
        writer.writerow([_fmt(t)] + [_fmt(v) for v in values[:, i]])


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def read_paths_csv(fh) -> tuple[np.ndarray, np.ndarray]:
    rows = list(csv.reader(fh))
    data = np.array([[float(v) for v in r] for r in rows[1:]])
    return data[:, 0], data[:, 1:].T


def iter_chunks(start: int, stop: int, size: int) -> Iterable[tuple[int, int]]:
    for lo in range(start, stop, size):
        yield lo, min(lo + size, stop)
