"""Variance lower bounds for parameterized quantum circuits on small patches."""
__version__ = "0.1.0"

from .architectures import ArchitectureSpec
from .bounds import (
    AssumptionViolated,
    BoundReport,
    NoCertifiedPatch,
    TemporalCorrelationError,
    bound_report,
    curvatures,
    r_patch_correlated,
    r_patch_uncorrelated,
    region_of_attraction,
    upper_bound_check,
)
from .circuit import Gate, LossProblem, ParameterizedCircuit, evaluate_loss, loss_derivative
from .fourier import dominant_frequency_weight, fourier_coefficients, frequency_spectrum
from .operators import OperatorSum, PauliTerm
from .variance import PatchSpec, approx_variance, estimate_variance, find_rmax, variance_sweep

__all__ = [
    "ArchitectureSpec",
    "AssumptionViolated",
    "BoundReport",
    "Gate",
    "LossProblem",
    "NoCertifiedPatch",
    "OperatorSum",
    "ParameterizedCircuit",
    "PatchSpec",
    "PauliTerm",
    "TemporalCorrelationError",
    "approx_variance",
    "bound_report",
    "curvatures",
    "dominant_frequency_weight",
    "estimate_variance",
    "evaluate_loss",
    "find_rmax",
    "fourier_coefficients",
    "frequency_spectrum",
    "loss_derivative",
    "r_patch_correlated",
    "r_patch_uncorrelated",
    "region_of_attraction",
    "upper_bound_check",
    "variance_sweep",
]
