"""Single-index conditional density estimation for right-censored responses."""

from .estimator import CensoredIndexRegressor
from .exceptions import (
    CensIndexError,
    FitError,
    InsufficientDataError,
    InvalidInputError,
    NumericalError,
    SelectionError,
)
from .fitter import FitConfig, IndexModelFit, fit, fixed_tau_fit, preliminary_fit, standard_errors
from .kernels import KERNEL, conditional_density, conditional_density_gradient, index_density
from .objective import Objective, pseudo_loglik
from .selection import asymptotic_components, cv_bandwidth, select_truncation
from .simulation import SimDesign, calibrate_censoring_rate, generate_dataset, monte_carlo_report
from .survival import (
    CensoredSample,
    censoring_survival,
    empirical_cdf_H,
    influence_psi,
    km_jump_weights,
    stute_integral,
)

__version__ = "0.1.0"

__all__ = [
    "CensIndexError", "CensoredIndexRegressor", "CensoredSample", "FitConfig", "FitError",
    "IndexModelFit", "InsufficientDataError", "InvalidInputError", "KERNEL", "NumericalError",
    "Objective", "SelectionError", "SimDesign", "asymptotic_components",
    "calibrate_censoring_rate", "censoring_survival", "conditional_density",
    "conditional_density_gradient", "cv_bandwidth", "empirical_cdf_H", "fit", "fixed_tau_fit",
    "generate_dataset", "index_density", "influence_psi", "km_jump_weights",
    "monte_carlo_report", "preliminary_fit", "pseudo_loglik", "select_truncation",
    "standard_errors", "stute_integral",
]
