"""scikit-learn compatible estimators wrapping the functional core."""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import (check_covariates, check_sample_weight,
                          check_survival_y)
from .design import SamplingDesign, compute_weights
from .estimator import SolverOptions, fit_wl_cox
from .survival_core import CohortData
from .variance import var_model_based, variance_report


class WeightedCoxPH(BaseEstimator):
    """Cox proportional hazards regression with per-subject IPW weights.

    Parameters
    ----------
    score_tol : float, default=1e-9
        Convergence tolerance on the sup-norm of the partial score.
    beta_tol : float, default=1e-8
        Convergence tolerance on the relative change of the coefficients.
    max_iter : int, default=25
    max_halvings : int, default=10

    Attributes
    ----------
    coef_ : ndarray of shape (n_features,)
    cumulative_hazard_ : StepHazard
        Breslow baseline cumulative hazard.
    information_ : ndarray of shape (n_features, n_features)
    dfbeta_ : ndarray of shape (n_samples, n_features)
    n_iter_ : int
    fit_ : CoxFit
    """

    def __init__(self, score_tol=1e-9, beta_tol=1e-8, max_iter=25,
                 max_halvings=10):
        self.score_tol = score_tol
        self.beta_tol = beta_tol
        self.max_iter = max_iter
        self.max_halvings = max_halvings

    def _options(self):
        return SolverOptions(score_tol=self.score_tol, beta_tol=self.beta_tol,
                             max_iter=self.max_iter,
                             max_halvings=self.max_halvings)

    def fit(self, X, y, sample_weight=None):
        """Fit the model.

        ``sample_weight`` holds ``xi_i / pi_i`` (zero for unsampled
        subjects, whose rows of ``X`` and ``y`` may be NaN).  The number
        of rows is taken as the phase-one size ``N``.
        """
        X = check_covariates(X)
        time, event = check_survival_y(y)
        w = check_sample_weight(sample_weight, X.shape[0])
        if time.shape[0] != X.shape[0]:
            raise ValueError("X and y have inconsistent numbers of samples")
        fit = fit_wl_cox(CohortData(time, event, X, w), self._options())
        self._set_fit(fit)
        self.n_features_in_ = X.shape[1]
        return self

    def _set_fit(self, fit):
        self.fit_ = fit
        self.coef_ = fit.beta_hat
        self.cumulative_hazard_ = fit.hazard
        self.information_ = fit.information
        self.dfbeta_ = fit.dfbeta
        self.n_iter_ = fit.n_iter

    def predict(self, X):
        """Linear predictor ``X @ coef_`` (log relative hazard)."""
        check_is_fitted(self, "coef_")
        X = check_covariates(X)
        return X @ self.coef_

    def predict_cumulative_hazard(self, X, times):
        """``Lambda0(t) exp(X coef_)``; shape (n_samples, n_times)."""
        base = self.cumulative_hazard_(np.atleast_1d(times))
        return np.exp(self.predict(X))[:, None] * base[None, :]

    def predict_survival_function(self, X, times):
        return np.exp(-self.predict_cumulative_hazard(X, times))

    def covariance(self):
        """Model-based covariance ``inv(I) / N``."""
        check_is_fitted(self, "coef_")
        return var_model_based(self.fit_)


class TwoPhaseCoxPH(WeightedCoxPH):
    """Cox regression for two-phase stratified samples.

    Runs the full procedure: inclusion probabilities from ``design``, the
    weighted-likelihood fit with inverse probabilities as weights, and the
    covariance estimators applicable to the design.

    Parameters
    ----------
    design : SamplingDesign or dict
        Sampling design (a dict is passed to ``SamplingDesign.from_dict``).

    Attributes
    ----------
    weights_ : WeightFit
    variance_ : VarianceReport
    covariance_ : ndarray
        Covariance of ``coef_`` under the design's primary estimator.
    standard_errors_ : ndarray
    """

    def __init__(self, design=None, score_tol=1e-9, beta_tol=1e-8,
                 max_iter=25, max_halvings=10):
        super().__init__(score_tol=score_tol, beta_tol=beta_tol,
                         max_iter=max_iter, max_halvings=max_halvings)
        self.design = design

    def fit(self, X, y, strata, sampled, aux=None, known_pi=None):
        """Fit from phase-one arrays.

        Parameters
        ----------
        X : array-like of shape (N, p)
            Covariates; rows of unsampled subjects may be NaN.
        y : survival target (see ``check_survival_y``)
        strata : array-like of int, shape (N,)
        sampled : array-like of bool, shape (N,)
        aux : array-like of shape (N, k), optional
            Auxiliary variables for logistic inclusion models.
        known_pi : array-like of shape (N,), optional
            Per-subject probabilities for ``bernoulli_known`` designs.
        """
        design = self.design
        if design is None:
            raise ValueError("a sampling design is required")
        if isinstance(design, dict):
            design = SamplingDesign.from_dict(design)
        X = check_covariates(X)
        time, event = check_survival_y(y)
        weights = compute_weights(None, design, strata=strata,
                                  sampled=sampled, aux=aux, known_pi=known_pi)
        if weights.n_subjects != X.shape[0]:
            raise ValueError("strata and X have inconsistent lengths")
        fit = fit_wl_cox(CohortData(time, event, X, weights.weights),
                         self._options())
        self._set_fit(fit)
        self.n_features_in_ = X.shape[1]
        self.weights_ = weights
        self.variance_ = variance_report(fit, weights)
        self.covariance_ = self.variance_[self.variance_.primary]
        self.standard_errors_ = self.variance_.standard_errors()
        return self

    def covariance(self, estimator=None):
        check_is_fitted(self, "variance_")
        return self.variance_[estimator or self.variance_.primary]
