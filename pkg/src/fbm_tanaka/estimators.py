"""scikit-learn wrapper around the term assembly.

``TanakaDecomposer`` treats each row of ``X`` as a sampled fBm driver on a
uniform grid of ``X.shape[1] - 1`` steps. ``fit`` builds the kernel weights
for that grid; ``transform`` solves the model on every row and returns the
decomposition terms, one column per name in ``TERM_NAMES``.
"""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .fbm import TimeGrid
from .malliavin import exact_factors
from .mc import TERM_NAMES, build_model
from .quad import KernelWeights
from .tanaka import term_arrays

__all__ = ["TanakaDecomposer"]


class TanakaDecomposer(TransformerMixin, BaseEstimator):
    """Map driver paths to the ten per-path Tanaka terms.

    Parameters
    ----------
    model : {"fbm", "fou", "doss"}
    hurst : float in (1/2, 1)
    horizon : float, length of the time interval covered by each row
    level : float, the level x in |X_t - x|
    n : int, mollifier index
    convention : {"argument_at_s", "argument_at_r"}
    nu : float, noise scale of the fractional OU model
    x0 : float, initial condition
    """

    def __init__(self, model="fbm", hurst=0.75, horizon=1.0, level=0.0, n=64,
                 convention="argument_at_s", nu=1.0, x0=0.0):
        self.model = model
        self.hurst = hurst
        self.horizon = horizon
        self.level = level
        self.n = n
        self.convention = convention
        self.nu = nu
        self.x0 = x0

    def fit(self, X, y=None):
        X = check_array(X, ensure_min_features=2)
        if self.model not in ("fbm", "fou", "doss"):
            raise ValueError(f"model must be fbm, fou or doss, got {self.model!r}")
        self.model_ = build_model(self.model, self.nu)
        self.grid_ = TimeGrid(self.horizon, X.shape[1] - 1)
        self.weights_ = KernelWeights(self.grid_, self.hurst)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "weights_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} columns, the decomposer was fitted on {self.n_features_in_}")
        if np.any(X[:, 0] != 0):
            raise ValueError("driver paths must start at 0")
        x = self.model_.solve_values(self.x0, X, self.grid_)
        row, col = exact_factors(self.model_, x, self.grid_)
        arr = term_arrays(x, row, col, self.model_.coefficients(), float(self.level), self.n, X,
                          self.weights_, self.convention)
        return np.column_stack([arr[t] for t in TERM_NAMES])

    def get_feature_names_out(self, input_features=None):
        return np.asarray(TERM_NAMES, dtype=object)
