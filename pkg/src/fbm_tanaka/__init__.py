"""Numerical Tanaka decomposition for SDEs driven by fractional Brownian motion."""

from ._validation import DomainError, SolverError
from .fbm import FbmPath, HurstParam, TimeGrid, covariance, inner_product_H, sample_fbm, sample_fbm_array
from .malliavin import DerivativeField, derivative_field, derivative_field_exact, first_variation
from .mollify import mollifier_eval
from .quad import (
    KernelWeights,
    fractional_norm,
    kernel_cell_weight,
    rs_integral,
    singular_double_integral,
)
from .sde import (
    Coefficients,
    CustomModel,
    DossModel,
    FbmModel,
    FouModel,
    SolutionPath,
    holder_estimate,
    solve_doss,
    solve_euler,
    solve_fou,
)
from .tanaka import (
    TanakaTerms,
    convex_residual,
    decomposition_terms,
    mollified_identity_residual,
    pathwise_residual,
    tanaka_residual,
    weighted_local_time_fbm,
)

from .mc import (
    EnsembleResult,
    ExperimentConfig,
    MCEstimate,
    cauchy_l4_diagnostic,
    density_diagnostic,
    l2_trace_convergence,
    run_ensemble,
)
from .estimators import TanakaDecomposer

__version__ = "0.1.0"
