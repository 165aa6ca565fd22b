"""Weighted-likelihood (IPW) Cox regression.

The baseline hazard is profiled out with the IPW Breslow estimator, which
leaves the IPW partial score as the estimating equation for ``beta``.  It
is solved by Newton's method with step-halving on the weighted log partial
likelihood.
"""

from dataclasses import dataclass, field

import numpy as np

from .exceptions import (ConvergenceError, MonotoneLikelihoodError,
                         SingularInformationError)
from .survival_core import (CohortData, StepHazard, breslow_hazard,
                            efficient_score_contributions,
                            score_and_information)


@dataclass(frozen=True)
class SolverOptions:
    """Newton solver settings.

    Convergence requires both ``max|score| <= score_tol`` and a relative
    change in ``beta`` of at most ``beta_tol``.
    """

    score_tol: float = 1e-9
    beta_tol: float = 1e-8
    max_iter: int = 25
    max_halvings: int = 10
    # information smaller than this fraction of its value at beta=0
    # means the likelihood keeps increasing towards infinity
    vanishing_information: float = 1e-8


@dataclass
class CoxFit:
    """Result of :func:`fit_wl_cox`.

    ``information`` is normalized by ``N`` (phase-one size) so that the
    model-based covariance of ``beta_hat`` is ``inv(information) / N``.
    ``dfbeta`` holds ``xi_i / pi_i * inv(information) @ efficient_score_i``
    and is zero for unsampled subjects.
    """

    beta_hat: np.ndarray
    hazard: StepHazard
    information: np.ndarray
    n_phase1: int
    dfbeta: np.ndarray
    efficient_scores: np.ndarray
    score: np.ndarray
    loglik: float
    converged: bool
    iterations: list = field(default_factory=list)

    @property
    def n_iter(self):
        return len(self.iterations)

    @property
    def influence(self):
        """Efficient influence estimates ``inv(I) @ efficient_score_i``."""
        return self.efficient_scores @ np.linalg.inv(self.information).T


def _null_direction(info):
    vals, vecs = np.linalg.eigh(info)
    return vals, vecs[:, 0]


def _singularity_scale(data):
    z = data.covariates[data.weights > 0]
    return max(float(np.mean(z ** 2)), np.finfo(float).tiny)


def fit_wl_cox(data, options=None, beta0=None):
    """Solve the IPW Cox partial-score equation.

    Parameters
    ----------
    data : CohortData
        Phase-one cohort with weights ``xi_i / pi_i``.
    options : SolverOptions, optional
    beta0 : array-like, optional
        Starting value; zeros by default.

    Returns
    -------
    CoxFit

    Raises
    ------
    SingularInformationError
        If the information is singular at the start (e.g. a constant or
        collinear covariate).  ``null_direction`` names the offending
        linear combination.
    MonotoneLikelihoodError
        If the likelihood increases without bound along some direction.
    ConvergenceError
        If the tolerances are not met within ``max_iter`` iterations.
    """
    if not isinstance(data, CohortData):
        raise TypeError("data must be a CohortData instance")
    opt = options or SolverOptions()
    p = data.n_covariates
    beta = np.zeros(p) if beta0 is None else np.asarray(beta0, float).copy()

    score, info, loglik = score_and_information(data, beta)
    vals, null = _null_direction(info)
    if vals[0] <= 1e-10 * _singularity_scale(data):
        raise SingularInformationError(
            "information matrix is singular at the starting value; the "
            "covariates are constant or collinear along null_direction",
            null_direction=null, eigenvalue=float(vals[0]))
    reference = vals[0]

    trace = [{"iteration": 0, "score_norm": float(np.max(np.abs(score))),
              "step": 0.0, "loglik": loglik}]
    converged = False
    for it in range(1, opt.max_iter + 1):
        step = np.linalg.solve(info, score)
        t = 1.0
        for _ in range(opt.max_halvings + 1):
            cand = beta + t * step
            try:
                c_score, c_info, c_ll = score_and_information(data, cand)
            except (ArithmeticError, ValueError):
                c_ll = -np.inf
            if c_ll >= loglik - 1e-12 * (1.0 + abs(loglik)):
                break
            t *= 0.5
        else:
            raise MonotoneLikelihoodError(
                f"step-halving failed {opt.max_halvings} times in a row; the "
                "partial likelihood has no finite maximum",
                trace=trace, beta=beta)
        delta = cand - beta
        beta, score, info, loglik = cand, c_score, c_info, c_ll
        trace.append({"iteration": it,
                      "score_norm": float(np.max(np.abs(score))),
                      "step": t, "loglik": loglik})

        vals, null = _null_direction(info)
        if vals[0] < opt.vanishing_information * reference:
            raise MonotoneLikelihoodError(
                "information vanishes while the partial likelihood keeps "
                "increasing: the estimate diverges along null_direction "
                "(monotone likelihood)",
                null_direction=null, beta=beta, trace=trace)
        rel = np.max(np.abs(delta)) / max(1.0, float(np.max(np.abs(beta))))
        if np.max(np.abs(score)) <= opt.score_tol and rel <= opt.beta_tol:
            converged = True
            break
    if not converged:
        raise ConvergenceError(
            f"Newton iteration did not converge in {opt.max_iter} steps",
            trace=trace, beta=beta)

    hazard = breslow_hazard(data, beta)
    eff = efficient_score_contributions(data, beta, hazard)
    dfbeta = data.weights[:, None] * np.linalg.solve(info, eff.T).T
    return CoxFit(beta_hat=beta, hazard=hazard, information=info,
                  n_phase1=data.n_subjects, dfbeta=dfbeta,
                  efficient_scores=eff, score=score, loglik=loglik,
                  converged=converged, iterations=trace)


def refit_hazard(data, beta):
    """Breslow cumulative hazard at an externally supplied ``beta``."""
    return breslow_hazard(data, beta)
