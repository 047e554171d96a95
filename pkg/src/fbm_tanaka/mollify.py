"""Gaussian mollification of |z - x| and its derivatives.

For index ``n`` the kernel is the centred Gaussian density with variance
``1/n``. ``f'_n = 2 * Phi_n - 1`` smooths the sign function, ``f''_n`` is
twice the kernel, and ``f_n`` is the antiderivative of ``f'_n`` vanishing
at the level.
"""

import math

import numpy as np
from scipy.special import erf

from ._validation import DomainError

__all__ = ["check_index", "kernel", "smooth_sign", "mollifier_eval", "uniform_error_bound"]


def check_index(n) -> int:
    if isinstance(n, bool) or int(n) != n or n < 1:
        raise DomainError(f"mollifier index must be a positive integer, got {n!r}")
    return int(n)


def kernel(n, u):
    """Gaussian density with variance 1/n evaluated at ``u``."""
    n = check_index(n)
    u = np.asarray(u, dtype=float)
    return math.sqrt(n / (2.0 * math.pi)) * np.exp(-0.5 * n * u * u)


def smooth_sign(n, u):
    n = check_index(n)
    return erf(np.asarray(u, dtype=float) * math.sqrt(n / 2.0))


def mollifier_eval(n, z, x=0.0):
    """Return ``(f_n, f'_n, f''_n)`` at ``z - x``.

    ``f_n(u) = u f'_n(u) + (2/n)(rho(u) - rho(0))`` is the closed-form
    antiderivative; it is convex with ``f_n(0) = 0``.
    """
    n = check_index(n)
    u = np.asarray(z, dtype=float) - x
    rho = kernel(n, u)
    fp = smooth_sign(n, u)
    f = u * fp + (2.0 / n) * (rho - math.sqrt(n / (2.0 * math.pi)))
    return f, fp, 2.0 * rho


def uniform_error_bound(n) -> float:
    """sup_z (|z - x| - f_n(z)) = sqrt(2 / (pi n))."""
    return math.sqrt(2.0 / (math.pi * check_index(n)))
