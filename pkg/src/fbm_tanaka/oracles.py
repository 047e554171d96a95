"""Closed-form reference values for the fBm model (b = 0, sigma = 1, X_0 = 0)."""

import math

from .fbm import as_hurst
from .mollify import check_index

__all__ = [
    "folded_normal_mean",
    "mollified_abs_mean",
    "weighted_local_time_mean",
    "gaussian_peak",
]


def folded_normal_mean(t: float, h) -> float:
    """E|B_t| = sqrt(2/pi) t^H."""
    return math.sqrt(2.0 / math.pi) * t ** as_hurst(h).h


def mollified_abs_mean(t: float, h, n: int) -> float:
    """E f_n(B_t) = sqrt(2/pi) (sqrt(t^{2H} + 1/n) - sqrt(1/n)).

    Also the mean of the local trace and of the weighted local time at
    finite ``n``; tends to :func:`folded_normal_mean` like n^{-1/2}.
    """
    v = t ** (2.0 * as_hurst(h).h)
    e = 1.0 / check_index(n)
    return math.sqrt(2.0 / math.pi) * (math.sqrt(v + e) - math.sqrt(e))


def weighted_local_time_mean(t: float, h) -> float:
    """2H int_0^t s^{2H-1} p_s(0) ds = 2 t^H / sqrt(2 pi)."""
    return 2.0 * t ** as_hurst(h).h / math.sqrt(2.0 * math.pi)


def gaussian_peak(t: float, h) -> float:
    """Peak of the N(0, t^{2H}) density, t^{-H} / sqrt(2 pi)."""
    return t ** (-as_hurst(h).h) / math.sqrt(2.0 * math.pi)
