"""Covariance estimators for the weighted-likelihood Cox estimate.

All functions return the covariance of ``beta_hat`` itself, i.e. the
asymptotic variance of ``sqrt(N)(beta_hat - beta)`` divided by ``N``.
Finite-sample conventions: residual cross-products are divided by ``N``
and within-stratum covariances by ``n_j``, so the regression and the
closed-form stratified routes agree exactly.
"""

from dataclasses import dataclass, field

import numpy as np

from .exceptions import DesignError, SingularInformationError

LABELS = {
    "model_based": "inverse efficient information",
    "bernoulli_known": "Bernoulli sampling, known weights, plug-in: "
                       "inv(I) + P_N[xi (1 - pi) / pi^2 l~^2]",
    "bernoulli_empirical": "Bernoulli sampling, known weights, empirical: "
                           "P_N[(xi l~ / pi)^2]",
    "fp_or_estimated": "estimated weights / finite population: residual "
                       "cross-products of dfbeta regressed on alpha influence",
    "estimated_plugin": "estimated weights, plug-in: Var(xi l~/pi) minus "
                        "cross-term sandwich with pi_dot",
    "stratified_second_moment": "stratified Bernoulli closed form: "
                                "sum_j nu_j (1 - p_j) / p_j P_j(l~^2)",
    "stratified_variance": "finite-population stratified closed form: "
                           "sum_j nu_j (1 - p_j) / p_j Var_j(l~)",
}


@dataclass
class VarianceReport:
    """Covariance estimates of ``beta_hat`` keyed by estimator name."""

    covariances: dict
    primary: str
    method_labels: dict = field(default_factory=dict)
    residual_diagnostics: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.covariances[key]

    def __contains__(self, key):
        return key in self.covariances

    @property
    def model_based(self):
        return self.covariances["model_based"]

    @property
    def bernoulli_known(self):
        return self.covariances.get("bernoulli_known")

    @property
    def fp_or_estimated(self):
        return self.covariances.get("fp_or_estimated")

    def standard_errors(self, key=None):
        cov = self.covariances[key or self.primary]
        return np.sqrt(np.clip(np.diag(cov), 0.0, None))

    def to_dict(self, beta=None):
        out = {"primary": self.primary, "estimators": {}}
        for key, cov in self.covariances.items():
            se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
            label = self.method_labels.get(key, LABELS.get(key, key))
            entry = {"label": label,
                     "covariance": cov.tolist(), "se": se.tolist()}
            if beta is not None:
                with np.errstate(divide="ignore", invalid="ignore"):
                    entry["z"] = (np.asarray(beta) / se).tolist()
            out["estimators"][key] = entry
        if self.residual_diagnostics:
            out["residual_diagnostics"] = self.residual_diagnostics
        return out


def _sym(a):
    return 0.5 * (a + a.T)


def _inv_information(fit):
    try:
        return np.linalg.inv(fit.information)
    except np.linalg.LinAlgError as exc:
        raise SingularInformationError("information matrix is singular") \
            from exc


def _ell_tilde(fit, weights):
    # l~_i = pi_i * dfbeta_i on sampled subjects
    return fit.dfbeta * np.where(weights.sampled, weights.pi, 0.0)[:, None]


def var_model_based(fit):
    """``inv(I) / N``."""
    return _sym(_inv_information(fit)) / fit.n_phase1


def var_bernoulli_known(fit, weights):
    """Plug-in variance under Bernoulli sampling with known ``pi``.

    ``[inv(I) + (1/N) sum_i xi_i (1 - pi_i) / pi_i^2 l~_i l~_i^T] / N``
    where ``l~_i = inv(I) @ efficient_score_i``.
    """
    pi = np.asarray(weights.pi, float)
    sampled = np.asarray(weights.sampled, bool)
    if np.any(sampled & ~(pi > 0)):
        raise DesignError("sampled subject without a valid inclusion "
                          "probability")
    n = fit.n_phase1
    ell = _ell_tilde(fit, weights)
    c = np.where(sampled, (1.0 - pi) / np.where(sampled, pi, 1.0) ** 2, 0.0)
    correction = (ell * c[:, None]).T @ ell / n
    return _sym(_inv_information(fit) + correction) / n


def var_bernoulli_empirical(fit):
    """``(1/N^2) sum_i dfbeta_i dfbeta_i^T``."""
    d = fit.dfbeta
    return _sym(d.T @ d) / fit.n_phase1 ** 2


def _regression_columns(a):
    a = np.asarray(a, float)
    if a.ndim == 1:
        a = a.reshape(-1, 1)
    keep = np.any(a != 0, axis=0)
    return a[:, keep]


def var_residual_regression(fit, weights, return_details=False):
    """Estimated-weights variance from regression residuals.

    Each column of ``dfbeta`` is regressed (least squares, no intercept)
    on the columns of ``weights.alpha_influence``; the result is
    ``(1/N^2) sum_i R_i R_i^T`` with residual rows ``R_i``.  All-zero
    influence columns (strata sampled in full) are dropped.

    The closed form ``[V - C inv(M) C^T] / N`` with ``V = P_N D D^T``,
    ``C = P_N D A^T`` and ``M = P_N A A^T`` is computed alongside and must
    agree with the residual route to 1e-10 relative.

    Raises
    ------
    DesignError
        If the influence columns are rank deficient or there are fewer
        than ``q + 1`` nonzero rows.
    """
    d = fit.dfbeta
    n = fit.n_phase1
    a = _regression_columns(weights.alpha_influence)
    q = a.shape[1]
    details = {"q": q, "r_squared": []}
    if q == 0:
        cov = var_bernoulli_empirical(fit)
        details["r_squared"] = [0.0] * d.shape[1]
        return (cov, details) if return_details else cov

    nonzero = np.any(a != 0, axis=1) | np.any(d != 0, axis=1)
    if int(nonzero.sum()) < q + 1:
        raise DesignError("fewer nonzero influence rows than regressors + 1")
    if np.linalg.matrix_rank(a) < q:
        raise DesignError("alpha influence columns are rank deficient")

    coef, *_ = np.linalg.lstsq(a, d, rcond=None)
    resid = d - a @ coef
    cov = _sym(resid.T @ resid) / n ** 2

    v = d.T @ d / n
    c = d.T @ a / n
    m = a.T @ a / n
    closed = _sym(v - c @ np.linalg.solve(m, c.T)) / n
    scale = max(float(np.max(np.abs(cov))), np.finfo(float).tiny)
    gap = float(np.max(np.abs(cov - closed))) / scale
    if gap > 1e-10:
        raise ArithmeticError(f"regression and closed-form routes disagree "
                              f"(relative gap {gap:.2e})")

    total = np.sum(d ** 2, axis=0)
    rss = np.sum(resid ** 2, axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        r2 = np.where(total > 0, 1.0 - rss / total, 0.0)
    details["r_squared"] = r2.tolist()
    details["closed_form_gap"] = gap
    return (cov, details) if return_details else cov


def var_estimated_plugin(fit, weights):
    """Estimated-weights variance with plug-in moment estimates.

    ``[V - C inv(M) C^T] / N`` where ``V`` is the Bernoulli plug-in
    variance, ``C = (1/N) sum 1[V0^c] xi l~ pi_dot^T / pi^2`` and
    ``M = (1/N) sum 1[V0^c] pi_dot pi_dot^T / (pi (1 - pi))``.
    """
    n = fit.n_phase1
    v = var_bernoulli_known(fit, weights) * n
    pi = weights.pi
    mask = ~weights.always_sampled & (pi < 1)
    pd = weights.pi_dot[mask]
    keep = np.any(pd != 0, axis=0)
    pd = pd[:, keep]
    if pd.shape[1] == 0:
        return v / n
    ell = _ell_tilde(fit, weights)[mask]
    xi = weights.sampled[mask]
    c = (ell * (xi / pi[mask] ** 2)[:, None]).T @ pd / n
    m = (pd / (pi[mask] * (1 - pi[mask]))[:, None]).T @ pd / n
    return _sym(v - c @ np.linalg.solve(m, c.T)) / n


def var_stratified_closed_form(fit, weights, use_second_moment,
                               phase_one_term="model"):
    """Closed-form stratified variance.

    ``[T0 + sum_j nu_j (1 - p_j) / p_j S_j] / N`` with ``nu_j = N_j / N``,
    ``p_j = n_j / N_j`` and ``S_j`` the within-stratum second moment
    (``use_second_moment=True``, stratified Bernoulli form) or covariance
    (finite-population form) of ``l~`` over the sampled subjects.

    Parameters
    ----------
    phase_one_term : {"model", "empirical"}
        ``T0`` is ``inv(I)`` for ``"model"`` or the IPW second moment
        ``P_N^pi l~ l~^T`` for ``"empirical"``; the latter is the
        convention under which this function equals
        :func:`var_residual_regression` exactly for stratum designs.
    """
    n = fit.n_phase1
    ell = _ell_tilde(fit, weights)
    strata = weights.strata
    sampled = weights.sampled
    if phase_one_term == "model":
        t0 = _inv_information(fit)
    elif phase_one_term == "empirical":
        w = np.where(sampled, 1.0 / weights.pi, 0.0)
        t0 = (ell * w[:, None]).T @ ell / n
    else:
        raise ValueError("phase_one_term must be 'model' or 'empirical'")

    total = np.zeros_like(t0)
    for j, (n_total, n_samp) in sorted(weights.stratum_counts.items()):
        mask = (strata == j) & sampled
        if np.all(weights.always_sampled[strata == j]):
            continue
        if n_samp == 0:
            raise DesignError(f"stratum {j} has no sampled subjects",
                              stratum=j)
        p_j = n_samp / n_total
        if p_j == 1.0:
            continue
        e = ell[mask]
        second = e.T @ e / n_samp
        if use_second_moment:
            s = second
        else:
            mean = e.mean(axis=0)
            s = second - np.outer(mean, mean)
        total += (n_total / n) * (1.0 - p_j) / p_j * s
    return _sym(t0 + total) / n


def variance_report(fit, weights):
    """All estimators applicable to the design of ``weights``."""
    cov = {"model_based": var_model_based(fit)}
    diag = {}
    cov["bernoulli_known"] = var_bernoulli_known(fit, weights)
    cov["bernoulli_empirical"] = var_bernoulli_empirical(fit)
    if weights.mode == "bernoulli_known":
        primary = "bernoulli_known"
    else:
        cov["fp_or_estimated"], diag = var_residual_regression(
            fit, weights, return_details=True)
        cov["estimated_plugin"] = var_estimated_plugin(fit, weights)
        primary = "fp_or_estimated"
        if weights.mode in ("finite_population", "estimated_stratified"):
            cov["stratified_second_moment"] = var_stratified_closed_form(
                fit, weights, use_second_moment=True)
            cov["stratified_variance"] = var_stratified_closed_form(
                fit, weights, use_second_moment=False)
    labels = {k: LABELS[k] for k in cov}
    return VarianceReport(covariances=cov, primary=primary,
                          method_labels=labels, residual_diagnostics=diag)
