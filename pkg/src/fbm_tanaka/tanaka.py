"""Term-by-term assembly of the Tanaka decomposition of |X_t - x|.

For a level ``x`` and mollifier index ``n`` the pathwise integral of
``f'_n(X - x) sigma(X)`` splits into a Skorokhod integral plus two trace
double integrals against alpha_H |s-r|^{2H-2}:

* ``trace_sigma_prime`` carries sigma' and the smoothed sign,
* ``trace_local`` carries f''_n and plays the role of the local time.

Two placements of the X argument are supported. ``argument_at_s`` is the
chain rule D_r[g(X_s)] = g'(X_s) D_r X_s. ``argument_at_r`` evaluates
sigma' and f''_n at X_r instead, with the smoothed sign kept at X_s.

The Skorokhod integral entering :func:`tanaka_residual` is always built
from the chain-rule traces (the divergence of the integrand), whatever
convention the reported traces use.
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass

import numpy as np

from ._validation import DomainError, sgn
from .fbm import FbmPath, TimeGrid, as_hurst
from .malliavin import DerivativeField
from .mollify import check_index, kernel, mollifier_eval
from .quad import KernelWeights, causal_pair_sum, rs_integral
from .sde import Coefficients, SolutionPath

__all__ = [
    "CONVENTIONS",
    "TanakaTerms",
    "term_arrays",
    "decomposition_terms",
    "mollified_identity_residual",
    "tanaka_residual",
    "pathwise_residual",
    "pathwise_residual_values",
    "convex_residual",
    "weighted_local_time_fbm",
    "weighted_local_time_values",
    "trace_local_values",
    "CSV_FIELDS",
    "write_terms_csv",
]

CONVENTIONS = ("argument_at_s", "argument_at_r")

CSV_FIELDS = (
    "path_id", "x", "n", "convention", "abs_increment", "drift", "rs_total",
    "trace_sigma_prime", "trace_local", "skorokhod", "residual_tchange", "residual_tf",
)


def _check_convention(convention: str) -> str:
    if convention not in CONVENTIONS:
        raise DomainError(f"convention must be one of {CONVENTIONS}, got {convention!r}")
    return convention


@dataclass(frozen=True)
class TanakaTerms:
    """Every term of the decomposition for one path, level and index.

    ``skorokhod = rs_total - trace_sigma_prime - trace_local`` holds by
    construction. The ``*_sgn`` fields replace f'_n by sgn; in
    ``skorokhod_sgn`` the local trace keeps its finite index and both traces
    use the chain-rule placement. ``f_increment`` is
    f_n(X_t - x) - f_n(X_0 - x).
    """

    abs_increment: float
    drift: float
    rs_total: float
    trace_sigma_prime: float
    trace_local: float
    skorokhod: float
    level: float
    n: int
    convention: str
    f_increment: float
    drift_sgn: float
    rs_sgn: float
    trace_sigma_prime_sgn: float
    skorokhod_sgn: float


def term_arrays(
    x: np.ndarray,
    row: np.ndarray,
    col: np.ndarray,
    coeffs: Coefficients,
    level: float,
    n: int,
    driver: np.ndarray,
    weights: KernelWeights,
    convention: str = "argument_at_s",
) -> dict[str, np.ndarray]:
    """Vectorised core of :func:`decomposition_terms`; leading axes are paths."""
    _check_convention(convention)
    n = check_index(n)
    x = np.asarray(x, dtype=float)
    dt = weights.grid.dt
    alpha = weights.h.alpha
    u = x - level
    f, fp, fpp = mollifier_eval(n, u)
    sg = sgn(u)
    sig = coeffs.sigma(x)
    sigp = coeffs.sigma_prime(x)
    b = coeffs.b(x)

    def pair(a, c):
        return alpha * causal_pair_sum(a, c, weights)

    out = {
        "abs_increment": np.abs(u[..., -1]) - np.abs(u[..., 0]),
        "f_increment": f[..., -1] - f[..., 0],
        "drift": np.sum(fp[..., :-1] * b[..., :-1], axis=-1) * dt,
        "drift_sgn": np.sum(sg[..., :-1] * b[..., :-1], axis=-1) * dt,
        "rs_total": rs_integral(fp * sig, driver),
        "rs_sgn": rs_integral(sg * sig, driver),
    }
    chain_sp = pair(row, fp * sigp * col)
    chain_sp_sgn = pair(row, sg * sigp * col)
    chain_local = pair(row, fpp * sig * col)
    if convention == "argument_at_s":
        out["trace_sigma_prime"] = chain_sp
        out["trace_sigma_prime_sgn"] = chain_sp_sgn
        out["trace_local"] = chain_local
    else:
        out["trace_sigma_prime"] = pair(sigp * row, fp * col)
        out["trace_sigma_prime_sgn"] = pair(sigp * row, sg * col)
        out["trace_local"] = pair(fpp * row, sig * col)
    out["skorokhod"] = out["rs_total"] - out["trace_sigma_prime"] - out["trace_local"]
    out["skorokhod_sgn"] = out["rs_sgn"] - chain_sp_sgn - chain_local
    out["residual_tchange"] = out["f_increment"] - out["drift"] - out["rs_total"]
    out["residual_tf"] = (
        out["abs_increment"] - out["drift_sgn"] - out["skorokhod_sgn"]
        - out["trace_sigma_prime_sgn"] - out["trace_local"]
    )
    return out


def trace_local_values(x, row, col, coeffs: Coefficients, level: float, n: int, weights: KernelWeights,
                       convention: str = "argument_at_s") -> np.ndarray:
    """The f''_n trace alone, as in :func:`term_arrays`."""
    _check_convention(convention)
    x = np.asarray(x, dtype=float)
    fpp = 2.0 * kernel(n, x - level)
    sig = coeffs.sigma(x)
    if convention == "argument_at_s":
        return weights.h.alpha * causal_pair_sum(row, fpp * sig * col, weights)
    return weights.h.alpha * causal_pair_sum(fpp * row, sig * col, weights)


def _check_grids(*objs) -> TimeGrid:
    grids = {o.grid for o in objs}
    if len(grids) != 1:
        raise DomainError("inputs live on different grids")
    return grids.pop()


def decomposition_terms(
    x_path: SolutionPath,
    d: DerivativeField,
    coeffs: Coefficients,
    level: float,
    n: int,
    driver: FbmPath,
    weights: KernelWeights,
    convention: str = "argument_at_s",
) -> TanakaTerms:
    _check_grids(x_path, d, driver, weights)
    arr = term_arrays(x_path.values, d.row, d.col, coeffs, float(level), n, driver.values, weights, convention)
    return TanakaTerms(
        abs_increment=float(arr["abs_increment"]),
        drift=float(arr["drift"]),
        rs_total=float(arr["rs_total"]),
        trace_sigma_prime=float(arr["trace_sigma_prime"]),
        trace_local=float(arr["trace_local"]),
        skorokhod=float(arr["skorokhod"]),
        level=float(level),
        n=check_index(n),
        convention=convention,
        f_increment=float(arr["f_increment"]),
        drift_sgn=float(arr["drift_sgn"]),
        rs_sgn=float(arr["rs_sgn"]),
        trace_sigma_prime_sgn=float(arr["trace_sigma_prime_sgn"]),
        skorokhod_sgn=float(arr["skorokhod_sgn"]),
    )


def mollified_identity_residual(terms: TanakaTerms, x_path: SolutionPath, n: int) -> float:
    """f_n(X_t - x) - f_n(X_0 - x) - drift - rs_total (discretisation error)."""
    if check_index(n) != terms.n:
        raise DomainError("terms were computed for a different mollifier index")
    f, _, _ = mollifier_eval(n, x_path.values[[0, -1]], terms.level)
    return float(f[1] - f[0] - terms.drift - terms.rs_total)


def tanaka_residual(terms: TanakaTerms, x_path: SolutionPath) -> float:
    """|X_t - x| - |X_0 - x| minus every right-hand term with sgn in place of f'_n.

    trace_local stays at the finite index as the local-time proxy.
    """
    x = x_path.values
    lhs = abs(x[-1] - terms.level) - abs(x[0] - terms.level)
    return float(lhs - terms.drift_sgn - terms.skorokhod_sgn - terms.trace_sigma_prime_sgn - terms.trace_local)


def pathwise_residual_values(x, coeffs: Coefficients, level: float, driver, dt: float, n: int | None = None):
    """Array core of :func:`pathwise_residual`."""
    x = np.asarray(x, dtype=float)
    u = x - level
    g = sgn(u) if n is None else mollifier_eval(n, u)[1]
    lhs = np.abs(u[..., -1]) - np.abs(u[..., 0])
    drift = np.sum(g[..., :-1] * coeffs.b(x[..., :-1]), axis=-1) * dt
    return lhs - drift - rs_integral(g * coeffs.sigma(x), driver)


def pathwise_residual(
    x_path: SolutionPath,
    coeffs: Coefficients,
    level: float,
    driver: FbmPath,
    n: int | None = None,
) -> float:
    """|X_t-x| - |X_0-x| - int sgn(X-x) b ds - RS int sgn(X-x) sigma dB.

    With an index ``n`` the smoothed sign f'_n replaces sgn in both integrals.
    """
    grid = _check_grids(x_path, driver)
    return float(pathwise_residual_values(x_path.values, coeffs, float(level), driver.values, grid.dt, n))


def convex_residual(
    atoms,
    alpha: float,
    beta: float,
    x_path: SolutionPath,
    d: DerivativeField,
    coeffs: Coefficients,
    n: int,
    driver: FbmPath,
    weights: KernelWeights,
    convention: str = "argument_at_s",
) -> float:
    """Residual for f(x) = alpha + beta x + sum_i w_i |x - a_i| with w_i >= 0.

    The linear part contributes beta times the residual of
    X_t - X_0 = int b ds + delta(sigma) + trace(sigma'), and each atom adds
    ``w_i * tanaka_residual`` at level a_i. ``alpha`` cancels.
    """
    atoms = [(float(a), float(w)) for a, w in atoms]
    if any(w < 0 for _, w in atoms):
        raise DomainError("atom weights must be nonnegative for a convex function")
    _check_grids(x_path, d, driver, weights)
    x = x_path.values
    dt = weights.grid.dt
    al = weights.h.alpha
    sig = coeffs.sigma(x)
    sigp = coeffs.sigma_prime(x)
    chain = al * causal_pair_sum(d.row, sigp * d.col, weights)
    if _check_convention(convention) == "argument_at_s":
        printed = chain
    else:
        printed = al * causal_pair_sum(sigp * d.row, d.col, weights)
    divergence = rs_integral(sig, driver.values) - chain
    drift = np.sum(coeffs.b(x[:-1])) * dt
    linear = (x[-1] - x[0]) - drift - divergence - printed
    total = beta * linear
    for a, w in atoms:
        terms = decomposition_terms(x_path, d, coeffs, a, n, driver, weights, convention)
        total += w * tanaka_residual(terms, x_path)
    return float(total)


def weighted_local_time_values(b: np.ndarray, grid: TimeGrid, level: float, n: int, h) -> np.ndarray:
    h = as_hurst(h).h
    t = grid.nodes[:-1]
    vals = np.asarray(b, dtype=float)[..., :-1]
    return 2.0 * h * np.sum(kernel(n, vals - level) * t ** (2.0 * h - 1.0), axis=-1) * grid.dt


def weighted_local_time_fbm(b_path: FbmPath, level: float, n: int, h) -> float:
    """2H sum_i rho_{1/n}(B_{t_i} - x) t_i^{2H-1} dt, left-point."""
    return float(weighted_local_time_values(b_path.values, b_path.grid, float(level), n, h))


def terms_row(path_id: int, terms: TanakaTerms, x_path: SolutionPath) -> dict:
    return {
        "path_id": path_id,
        "x": terms.level,
        "n": terms.n,
        "convention": terms.convention,
        "abs_increment": terms.abs_increment,
        "drift": terms.drift,
        "rs_total": terms.rs_total,
        "trace_sigma_prime": terms.trace_sigma_prime,
        "trace_local": terms.trace_local,
        "skorokhod": terms.skorokhod,
        "residual_tchange": mollified_identity_residual(terms, x_path, terms.n),
        "residual_tf": tanaka_residual(terms, x_path),
    }


def write_terms_csv(fh, rows) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(CSV_FIELDS)
    for r in rows:
        writer.writerow([_cell(r[k]) for k in CSV_FIELDS])


def _cell(v) -> str:
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def as_dict(terms: TanakaTerms) -> dict:
    return asdict(terms)
