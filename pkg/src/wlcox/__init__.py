"""Weighted-likelihood Cox regression for two-phase stratified samples."""

__version__ = "0.1.0"

from .design import (PhaseOneRecord, SamplingDesign, WeightFit,
                     compute_weights, draw_phase_two, fit_logistic_alpha)
from .estimator import CoxFit, SolverOptions, fit_wl_cox, refit_hazard
from .exceptions import (ConvergenceError, DegenerateDataError, DesignError,
                         MonotoneLikelihoodError, NumericalOverflowError,
                         SchemaError, SingularInformationError, WLCoxError)
from .models import TwoPhaseCoxPH, WeightedCoxPH
from .survival_core import (CohortData, RiskSetSums, StepHazard,
                            breslow_hazard, compute_risk_sums,
                            efficient_score_contributions,
                            log_partial_likelihood, partial_information,
                            partial_score)
from .variance import (VarianceReport, var_bernoulli_empirical,
                       var_bernoulli_known, var_estimated_plugin,
                       var_model_based, var_residual_regression,
                       var_stratified_closed_form, variance_report)

__all__ = [
    "CohortData", "ConvergenceError", "CoxFit", "DegenerateDataError",
    "DesignError", "MonotoneLikelihoodError", "NumericalOverflowError",
    "PhaseOneRecord", "RiskSetSums", "SamplingDesign", "SchemaError",
    "SingularInformationError", "SolverOptions", "StepHazard",
    "TwoPhaseCoxPH", "VarianceReport", "WLCoxError", "WeightFit",
    "WeightedCoxPH", "breslow_hazard", "compute_risk_sums",
    "compute_weights", "draw_phase_two", "efficient_score_contributions",
    "fit_logistic_alpha", "fit_wl_cox", "log_partial_likelihood",
    "partial_information", "partial_score", "refit_hazard",
    "var_bernoulli_empirical", "var_bernoulli_known", "var_estimated_plugin",
    "var_model_based", "var_residual_regression",
    "var_stratified_closed_form", "variance_report",
]
