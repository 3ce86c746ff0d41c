"""Exact gradients and Hessians of state-space model likelihoods.

The package fits structural time-series models (trend, seasonal
adjustment, seasonal plus AR) by maximum likelihood, computing the
gradient and Hessian of the concentrated log-likelihood exactly through
sensitivity recursions run in lockstep with the Kalman filter instead of
numerical differencing.
"""

from ._backend import available_backends, have_compiled, resolve as resolve_backend
from .core import (
    DegenerateLikelihood,
    DerivativeBundle,
    DimensionMismatch,
    InitialCondition,
    InvariantViolation,
    NonFiniteDerivative,
    NonFiniteInput,
    NonFiniteObjective,
    NonFiniteState,
    SsmgradError,
    StateSpaceModel,
    SystemMatrices,
    validate_dimensions,
    zero_bundle,
)
from .derivatives import DerivativeReport, evaluate
from .kalman import FilterStep, LikelihoodSummary, concentrated_loglik, run_filter
from .models import SeasonalArSpec, SeasonalSpec, TrendSpec
from .optimize import OptimizerConfig, OptimResult, maximize, multistart
from .simulate import simulate_series
from .verify import FdConfig, compare, fd_gradient, fd_hessian

__version__ = "0.1.0"

__all__ = [
    "available_backends",
    "have_compiled",
    "resolve_backend",
    "SsmgradError",
    "DimensionMismatch",
    "InvariantViolation",
    "NonFiniteInput",
    "NonFiniteState",
    "NonFiniteDerivative",
    "NonFiniteObjective",
    "DegenerateLikelihood",
    "SystemMatrices",
    "DerivativeBundle",
    "InitialCondition",
    "StateSpaceModel",
    "zero_bundle",
    "validate_dimensions",
    "FilterStep",
    "LikelihoodSummary",
    "concentrated_loglik",
    "run_filter",
    "DerivativeReport",
    "evaluate",
    "TrendSpec",
    "SeasonalSpec",
    "SeasonalArSpec",
    "OptimizerConfig",
    "OptimResult",
    "maximize",
    "multistart",
    "simulate_series",
    "FdConfig",
    "fd_gradient",
    "fd_hessian",
    "compare",
    "__version__",
]
