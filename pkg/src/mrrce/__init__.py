"""Multivariate random-effect regression with penalized error precision (MrRCE)."""
from .em import FitConfig, FitResult, fit, fit_cv, select_lambda
from .glasso import glasso_fit
from .model import Dataset, ParameterSet, center_columns
from .simgen import SimConfig, simulate

__all__ = [
    "Dataset",
    "FitConfig",
    "FitResult",
    "ParameterSet",
    "SimConfig",
    "center_columns",
    "fit",
    "fit_cv",
    "glasso_fit",
    "select_lambda",
    "simulate",
]
