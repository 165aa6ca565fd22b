"""Weighted risk-set sums and Cox score, information and hazard quantities.

Every function takes per-subject nonnegative weights (``xi / pi`` in a
two-phase design, all ones for a full cohort) and normalizes sums by the
number of phase-one subjects ``N``, not by the total weight.  Rows with
zero weight never enter a computation, so unsampled subjects may carry
NaN placeholders for time, status and covariates.

Ties are handled with the Breslow convention and a subject whose time
equals an event time is at risk at that time.
"""

from dataclasses import dataclass

import numpy as np

from .exceptions import DegenerateDataError, NumericalOverflowError

# exp() overflows float64 just above 709.78
_LOG_MAX = 700.0


@dataclass(frozen=True)
class CohortData:
    """Phase-one cohort with IPW weights.

    Parameters
    ----------
    times : ndarray of shape (N,)
        Follow-up times ``T``.
    status : ndarray of shape (N,)
        Event indicators ``Delta`` (1 = failure observed).
    covariates : ndarray of shape (N, p)
        Covariate rows ``Z``.
    weights : ndarray of shape (N,)
        Nonnegative weights; zero for subjects not sampled at phase two.
    """

    times: np.ndarray
    status: np.ndarray
    covariates: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float).ravel()
        status = np.asarray(self.status, dtype=float).ravel()
        weights = np.asarray(self.weights, dtype=float).ravel()
        z = np.asarray(self.covariates, dtype=float)
        if z.ndim == 1:
            z = z.reshape(-1, 1)
        n = times.shape[0]
        if not (status.shape[0] == weights.shape[0] == z.shape[0] == n):
            raise ValueError(
                "times, status, covariates and weights must have the same "
                f"number of rows, got {n}, {status.shape[0]}, {z.shape[0]}, "
                f"{weights.shape[0]}"
            )
        if n == 0:
            raise ValueError("cohort is empty")
        if not np.all(np.isfinite(weights)) or np.any(weights < 0):
            raise ValueError("weights must be finite and nonnegative")
        active = weights > 0
        if not np.all(np.isfinite(times[active])) or np.any(times[active] < 0):
            raise ValueError("times of weighted subjects must be finite "
                             "and >= 0")
        if not np.all(np.isin(status[active], (0.0, 1.0))):
            raise ValueError("status of weighted subjects must be 0 or 1")
        if not np.all(np.isfinite(z[active])):
            raise ValueError("covariates of weighted subjects must be finite")
        if not np.any(active & (status == 1)):
            raise DegenerateDataError(
                "no weighted events: at least one subject with status 1 and "
                "positive weight is required"
            )
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "status", status)
        object.__setattr__(self, "covariates", z)
        object.__setattr__(self, "weights", weights)

    @property
    def n_subjects(self):
        return self.times.shape[0]

    @property
    def n_covariates(self):
        return self.covariates.shape[1]

    def scaled(self, factor):
        """Copy with every weight multiplied by ``factor``."""
        return CohortData(self.times, self.status, self.covariates,
                          self.weights * factor)


@dataclass(frozen=True)
class RiskSetSums:
    """Weighted risk-set moments at each distinct weighted event time."""

    event_times: np.ndarray
    s0: np.ndarray
    s1: np.ndarray
    s2: np.ndarray


@dataclass(frozen=True)
class StepHazard:
    """Right-continuous step-function cumulative hazard."""

    jump_times: np.ndarray
    jumps: np.ndarray

    def cumulative(self, t):
        """Evaluate the cumulative hazard at ``t`` (scalar or array)."""
        t = np.asarray(t, dtype=float)
        cum = np.concatenate([[0.0], np.cumsum(self.jumps)])
        return cum[np.searchsorted(self.jump_times, t, side="right")]

    def __call__(self, t):
        return self.cumulative(t)


@dataclass(frozen=True)
class _Sweep:
    # Risk-set moments on a shifted scale: true s_k = exp(offset) * s_k here.
    event_times: np.ndarray
    d_weighted: np.ndarray
    s0: np.ndarray
    s1: np.ndarray
    s2: np.ndarray
    offset: float
    n: int


def _active(data):
    keep = data.weights > 0
    return (data.times[keep], data.status[keep], data.covariates[keep],
            data.weights[keep])


def _check_beta(data, beta):
    beta = np.asarray(beta, dtype=float).ravel()
    if beta.shape[0] != data.n_covariates:
        raise ValueError(
            f"beta has length {beta.shape[0]}, expected {data.n_covariates}")
    if not np.all(np.isfinite(beta)):
        raise ValueError("beta must be finite")
    return beta


def _linear_predictor(z, w, beta):
    """Return centered linear predictor and the centering offset."""
    eta = z @ beta
    # centering Z at its weighted mean == subtracting the weighted mean of eta
    offset = float(np.dot(w, eta) / w.sum())
    eta_c = eta - offset
    if np.max(np.abs(eta_c)) > _LOG_MAX:
        raise NumericalOverflowError(
            "exp(Z beta) overflows even after centering; beta is "
            "ill-conditioned for these covariates", beta=beta)
    return eta_c, offset


def _sweep(data, beta, second_moment=True):
    t, d, z, w = _active(data)
    eta_c, offset = _linear_predictor(z, w, beta)
    order = np.argsort(t, kind="mergesort")
    t, d, z, w, eta_c = t[order], d[order], z[order], w[order], eta_c[order]

    r = w * np.exp(eta_c)
    # reverse cumulative sums: element k sums over sorted subjects k..end
    c0 = np.cumsum(r[::-1])[::-1]
    c1 = np.cumsum((r[:, None] * z)[::-1], axis=0)[::-1]

    event_times = np.unique(t[d == 1])
    first = np.searchsorted(t, event_times, side="left")
    n = data.n_subjects
    s0 = c0[first] / n
    s1 = c1[first] / n
    if second_moment:
        outer = r[:, None, None] * z[:, :, None] * z[:, None, :]
        c2 = np.cumsum(outer[::-1], axis=0)[::-1]
        s2 = c2[first] / n
    else:
        s2 = None
    if np.any(s0 <= 0):
        raise DegenerateDataError("empty weighted risk set at an event time")
    d_weighted = np.bincount(np.searchsorted(event_times, t[d == 1]),
                             weights=w[d == 1], minlength=event_times.size)
    return _Sweep(event_times, d_weighted, s0, s1, s2, offset, n)


def compute_risk_sums(data, beta):
    """Weighted risk-set sums ``S0``, ``S1`` and ``S2`` at each event time.

    ``S_k(t) = (1/N) sum_i w_i exp(Z_i beta) 1[T_i >= t] Z_i^{(x)k}``.
    Computed with a single reverse-time cumulative sweep.

    Raises
    ------
    NumericalOverflowError
        If ``exp(Z beta)`` cannot be represented.
    """
    beta = _check_beta(data, beta)
    sw = _sweep(data, beta)
    scale = np.exp(sw.offset)
    if not np.isfinite(scale) or scale == 0.0:
        raise NumericalOverflowError(
            "risk-set sums are not representable at this beta", beta=beta)
    return RiskSetSums(sw.event_times, sw.s0 * scale, sw.s1 * scale,
                       sw.s2 * scale)


def log_partial_likelihood(data, beta):
    """Weighted log partial likelihood, normalized by ``N``.

    ``(1/N) sum_i w_i Delta_i [Z_i beta - log(N S0(T_i; beta))]``
    """
    beta = _check_beta(data, beta)
    sw = _sweep(data, beta, second_moment=False)
    t, d, z, w = _active(data)
    ev = d == 1
    idx = np.searchsorted(sw.event_times, t[ev])
    log_risk = np.log(sw.n * sw.s0[idx]) + sw.offset
    return float(np.sum(w[ev] * (z[ev] @ beta - log_risk)) / sw.n)


def partial_score(data, beta):
    """IPW partial score ``(1/N) sum w_i Delta_i [Z_i - S1/S0 (T_i)]``."""
    beta = _check_beta(data, beta)
    sw = _sweep(data, beta, second_moment=False)
    return _score_from_sweep(data, sw)


def _score_from_sweep(data, sw):
    _, d, z, w = _active(data)
    m = sw.s1 / sw.s0[:, None]
    # sum_i w_i Delta_i Z_i  -  sum_k d_k m_k
    return ((w * d) @ z - sw.d_weighted @ m) / sw.n


def _information_from_sweep(sw):
    m = sw.s1 / sw.s0[:, None]
    cov = sw.s2 / sw.s0[:, None, None] - m[:, :, None] * m[:, None, :]
    info = np.einsum("k,kij->ij", sw.d_weighted, cov) / sw.n
    return 0.5 * (info + info.T)


def partial_information(data, beta):
    """Minus the Jacobian of :func:`partial_score`.

    ``(1/N) sum w_i Delta_i [S2/S0 - (S1/S0)^{(x)2}](T_i)``; symmetric PSD.
    """
    beta = _check_beta(data, beta)
    return _information_from_sweep(_sweep(data, beta))


def score_and_information(data, beta):
    """Score, information and log partial likelihood from one sweep."""
    beta = _check_beta(data, beta)
    sw = _sweep(data, beta)
    score = _score_from_sweep(data, sw)
    info = _information_from_sweep(sw)
    t, d, z, w = _active(data)
    ev = d == 1
    idx = np.searchsorted(sw.event_times, t[ev])
    loglik = np.sum(w[ev] * (z[ev] @ beta - np.log(sw.n * sw.s0[idx])
                             - sw.offset)) / sw.n
    return score, info, float(loglik)


def breslow_hazard(data, beta):
    """IPW Breslow estimator of the baseline cumulative hazard.

    The jump at event time ``t`` is the weighted number of events at ``t``
    divided by ``N * S0(t; beta)``; tied events pool into one jump.
    """
    beta = _check_beta(data, beta)
    sw = _sweep(data, beta, second_moment=False)
    jumps = sw.d_weighted / (sw.n * sw.s0) * np.exp(-sw.offset)
    return StepHazard(sw.event_times, jumps)


def efficient_score_contributions(data, beta, hazard):
    """Per-subject efficient score rows for the Cox model.

    Row ``i`` is ``Delta_i [Z_i - m(T_i)] - exp(Z_i beta) *
    sum_{t_k <= T_i} [Z_i - m(t_k)] dLambda(t_k)`` with ``m = S1/S0``.
    Rows of zero-weight subjects are returned as zeros.

    Parameters
    ----------
    data : CohortData
    beta : array-like of shape (p,)
    hazard : StepHazard
        Breslow hazard computed at the same ``beta``.

    Returns
    -------
    ndarray of shape (N, p)
    """
    beta = _check_beta(data, beta)
    sw = _sweep(data, beta, second_moment=False)
    if hazard.jump_times.shape != sw.event_times.shape or not np.allclose(
            hazard.jump_times, sw.event_times):
        raise ValueError("hazard jump times do not match the event times of "
                         "the data")
    m = sw.s1 / sw.s0[:, None]

    keep = data.weights > 0
    t = data.times[keep]
    d = data.status[keep]
    z = data.covariates[keep]
    eta_c = z @ beta - sw.offset
    jumps_c = hazard.jumps * np.exp(sw.offset)

    cum_h = np.concatenate([[0.0], np.cumsum(jumps_c)])
    cum_m = np.vstack([np.zeros((1, m.shape[1])),
                       np.cumsum(m * jumps_c[:, None], axis=0)])
    upto = np.searchsorted(sw.event_times, t, side="right")
    integral = z * cum_h[upto][:, None] - cum_m[upto]
    rows = -np.exp(eta_c)[:, None] * integral

    ev = d == 1
    k_ev = np.searchsorted(sw.event_times, t[ev])
    rows[ev] += z[ev] - m[k_ev]

    out = np.zeros((data.n_subjects, data.n_covariates))
    out[keep] = rows
    return out
