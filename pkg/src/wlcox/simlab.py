"""Monte Carlo laboratory for two-phase Cox designs.

Cohorts are generated i.i.d. from a proportional-hazards model and then
classified into strata on the event indicator and a coarsened auxiliary
variable.  Replicate ``r`` of a study draws all of its randomness from a
generator seeded with ``(master_seed, r)``, so any replicate can be rerun
in isolation and results do not depend on the number of workers.
"""

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, special, stats

from .design import SamplingDesign, compute_weights, draw_phase_two, \
    logistic_design_matrix
from .estimator import SolverOptions, fit_wl_cox
from .exceptions import DesignError, SchemaError, WLCoxError
from .survival_core import CohortData
from .variance import variance_report

# (strata entry, default label) for the delta/aux rule
_DEFAULT_TABLE = {"1,1": 0, "1,0": 1, "0,0": 2, "0,1": 3}


@dataclass
class ScenarioConfig:
    """Simulation scenario.

    Parameters
    ----------
    n_subjects : int
    beta_true : list of float
    baseline : dict
        ``{"family": "exponential", "rate": lam}`` or
        ``{"family": "weibull", "shape": k, "scale": s}``.
    censoring : dict
        ``{"type": "administrative", "tau": tau}`` (point mass at ``tau``),
        ``{"type": "exponential", "rate": r, "tau": tau}`` or
        ``{"type": "uniform", "low": a, "high": b, "tau": tau}``; ``tau``
        may be ``None`` for continuous schemes.
    covariates : list of dict
        One entry per covariate: ``{"dist": "bernoulli", "p": p}`` or
        ``{"dist": "normal", "mean": m, "sd": s}``.
    aux : dict
        ``{"source": k, "noise_sd": s, "threshold": c}``: the auxiliary
        variable is ``Z_k + N(0, s^2)`` and its coarsened version is
        ``1[aux > c]``.
    strata : dict
        ``{"rule": "delta_aux", "table": {"delta,coarse": label}}``,
        ``{"rule": "case_cohort"}`` (cases -> 0, others -> 1) or
        ``{"rule": "aux"}`` (label ``1 + coarse``).
    design : SamplingDesign
    replicates : int
    master_seed : int
    full_cohort_fit : bool
        Also fit every replicate's complete cohort.
    """

    n_subjects: int
    beta_true: list
    baseline: dict
    censoring: dict
    covariates: list
    design: SamplingDesign
    aux: dict = field(default_factory=lambda: {"source": 0, "noise_sd": 0.0,
                                               "threshold": 0.5})
    strata: dict = field(default_factory=lambda: {"rule": "delta_aux"})
    replicates: int = 100
    master_seed: int = 0
    full_cohort_fit: bool = False

    def __post_init__(self):
        self.beta_true = [float(b) for b in self.beta_true]
        if isinstance(self.design, dict):
            self.design = SamplingDesign.from_dict(self.design)
        self.validate()

    @property
    def p(self):
        return len(self.beta_true)

    def validate(self):
        if int(self.n_subjects) < 2:
            raise SchemaError("n_subjects must be at least 2",
                              path="$.n_subjects")
        if len(self.covariates) != self.p:
            raise SchemaError("covariates must have one entry per "
                              "coefficient", path="$.covariates")
        for k, spec in enumerate(self.covariates):
            if spec.get("dist") not in ("bernoulli", "normal"):
                raise SchemaError("dist must be 'bernoulli' or 'normal'",
                                  path=f"$.covariates[{k}].dist")
        fam = self.baseline.get("family")
        if fam not in ("exponential", "weibull"):
            raise SchemaError("family must be 'exponential' or 'weibull'",
                              path="$.baseline.family")
        ctype = self.censoring.get("type")
        if ctype not in ("administrative", "exponential", "uniform"):
            raise SchemaError("unknown censoring type",
                              path="$.censoring.type")
        tau = self.tau
        if ctype == "administrative" and not math.isfinite(tau):
            raise SchemaError("administrative censoring needs a finite tau",
                              path="$.censoring.tau")
        if ctype == "uniform" and not (
                0 <= self.censoring["low"] < self.censoring["high"]):
            raise SchemaError("uniform censoring needs 0 <= low < high",
                              path="$.censoring")
        if self.strata.get("rule") not in ("delta_aux", "case_cohort", "aux"):
            raise SchemaError("unknown strata rule", path="$.strata.rule")
        src = int(self.aux.get("source", 0))
        if not 0 <= src < self.p:
            raise SchemaError("aux source must index a covariate",
                              path="$.aux.source")
        if int(self.replicates) < 1:
            raise SchemaError("replicates must be positive",
                              path="$.replicates")

    @property
    def tau(self):
        tau = self.censoring.get("tau")
        return math.inf if tau is None else float(tau)

    @classmethod
    def from_dict(cls, spec):
        if not isinstance(spec, dict):
            raise SchemaError("scenario must be a JSON object", path="$")
        required = ("n_subjects", "beta_true", "baseline", "censoring",
                    "covariates", "design")
        for key in required:
            if key not in spec:
                raise SchemaError("missing required key", path=f"$.{key}")
        known = set(cls.__dataclass_fields__)
        extra = set(spec) - known
        if extra:
            raise SchemaError(f"unknown key {sorted(extra)[0]!r}",
                              path=f"$.{sorted(extra)[0]}")
        kwargs = dict(spec)
        try:
            design = SamplingDesign.from_dict(kwargs.pop("design"))
        except SchemaError as exc:
            raise SchemaError(str(exc), path="$.design" + (
                exc.path or "$")[1:]) from exc
        except DesignError as exc:
            raise SchemaError(str(exc), path="$.design") from exc
        try:
            return cls(design=design, **kwargs)
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, SchemaError):
                raise
            raise SchemaError(f"invalid scenario: {exc}", path="$") from exc

    @classmethod
    def from_json(cls, path):
        with open(path, encoding="utf-8") as fh:
            try:
                spec = json.load(fh)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"scenario is not valid JSON: {exc}",
                                  path="$") from exc
        return cls.from_dict(spec)

    def to_dict(self):
        return {
            "n_subjects": int(self.n_subjects),
            "beta_true": list(self.beta_true),
            "baseline": dict(self.baseline),
            "censoring": dict(self.censoring),
            "covariates": [dict(c) for c in self.covariates],
            "aux": dict(self.aux),
            "strata": dict(self.strata),
            "design": self.design.to_dict(),
            "replicates": int(self.replicates),
            "master_seed": int(self.master_seed),
            "full_cohort_fit": bool(self.full_cohort_fit),
        }

    def replace(self, **changes):
        spec = self.to_dict()
        spec.update(changes)
        return ScenarioConfig.from_dict(spec)


@dataclass
class SimulatedCohort:
    """Complete phase-one cohort from :func:`generate_cohort`."""

    times: np.ndarray
    status: np.ndarray
    covariates: np.ndarray
    aux: np.ndarray
    coarse_aux: np.ndarray
    strata: np.ndarray

    @property
    def n_subjects(self):
        return self.times.shape[0]

    def full_data(self):
        return CohortData(self.times, self.status, self.covariates,
                          np.ones(self.n_subjects))

    def phase_two_data(self, weights):
        return CohortData(self.times, self.status, self.covariates, weights)


# -- generative model -------------------------------------------------------

def _draw_covariates(config, n, rng):
    cols = []
    for spec in config.covariates:
        if spec["dist"] == "bernoulli":
            cols.append((rng.random(n) < spec.get("p", 0.5)).astype(float))
        else:
            cols.append(rng.normal(spec.get("mean", 0.0), spec.get("sd", 1.0),
                                   size=n))
    return np.column_stack(cols)


def _inverse_baseline(config, x):
    base = config.baseline
    if base["family"] == "exponential":
        return x / float(base["rate"])
    return float(base["scale"]) * x ** (1.0 / float(base["shape"]))


def _baseline_cumhaz(config, t):
    base = config.baseline
    if base["family"] == "exponential":
        return float(base["rate"]) * t
    return (t / float(base["scale"])) ** float(base["shape"])


def _draw_censoring(config, n, rng):
    cens = config.censoring
    if cens["type"] == "administrative":
        c = np.full(n, math.inf)
    elif cens["type"] == "exponential":
        c = rng.exponential(1.0 / float(cens["rate"]), size=n)
    else:
        c = rng.uniform(float(cens["low"]), float(cens["high"]), size=n)
    return np.minimum(c, config.tau)


def _classify(config, status, coarse):
    rule = config.strata.get("rule", "delta_aux")
    if rule == "case_cohort":
        return np.where(status == 1, 0, 1)
    if rule == "aux":
        return 1 + coarse.astype(int)
    table = config.strata.get("table") or _DEFAULT_TABLE
    out = np.empty(status.shape[0], dtype=int)
    for key, label in table.items():
        d, a = (int(v) for v in key.split(","))
        out[(status == d) & (coarse == a)] = int(label)
    return out


def _draw_subjects(config, n, rng):
    z = _draw_covariates(config, n, rng)
    eta = z @ np.asarray(config.beta_true)
    t_fail = _inverse_baseline(config, rng.exponential(size=n) * np.exp(-eta))
    c = _draw_censoring(config, n, rng)
    status = (t_fail <= c).astype(float)
    times = np.minimum(t_fail, c)
    src = int(config.aux.get("source", 0))
    sd = float(config.aux.get("noise_sd", 0.0))
    aux = z[:, src] + (rng.normal(0.0, sd, size=n) if sd > 0 else 0.0)
    coarse = (aux > float(config.aux.get("threshold", 0.5))).astype(int)
    strata = _classify(config, status, coarse)
    return SimulatedCohort(times, status, z, aux.reshape(-1, 1), coarse,
                           strata)


def generate_cohort(config, rng):
    """Draw a complete phase-one cohort of ``config.n_subjects`` subjects.

    Failure times have hazard ``lambda0(t) exp(Z beta)``; the observed time
    is the minimum of failure and censoring (truncated at ``tau``).

    Raises
    ------
    DesignError
        If the scenario yields (essentially) no events.
    """
    if expected_event_fraction(config) * config.n_subjects < 1.0:
        raise DesignError("scenario yields fewer than one expected event")
    return _draw_subjects(config, int(config.n_subjects), rng)


def _concat(parts):
    return SimulatedCohort(*(np.concatenate([getattr(p, f) for p in parts])
                             for f in ("times", "status", "covariates", "aux",
                                       "coarse_aux", "strata")))


def _take(cohort, idx):
    return SimulatedCohort(cohort.times[idx], cohort.status[idx],
                           cohort.covariates[idx], cohort.aux[idx],
                           cohort.coarse_aux[idx], cohort.strata[idx])


def generate_cohort_by_strata(config, rng, n=None):
    """Stratum-first generation of a phase-one cohort.

    Stratum labels are drawn from a multinomial with the exact stratum
    probabilities, and each subject is then drawn from the conditional
    law of the model given its stratum (by rejection).  The result has the
    same distribution as :func:`generate_cohort`.
    """
    n = int(config.n_subjects if n is None else n)
    probs = stratum_probabilities(config)
    labels = np.array(sorted(probs))
    p = np.array([probs[j] for j in labels])
    counts = rng.multinomial(n, p / p.sum())
    parts = []
    for label, count in zip(labels, counts):
        got = []
        have = 0
        while have < count:
            batch = _draw_subjects(config, max(64, 2 * (count - have)), rng)
            idx = np.flatnonzero(batch.strata == label)
            got.append(_take(batch, idx[: count - have]))
            have += min(idx.size, count - have)
        if got:
            parts.append(_concat(got))
    cohort = _concat(parts)
    return _take(cohort, rng.permutation(n))


# -- exact scenario probabilities -------------------------------------------

def _covariate_nodes(config, order=40):
    axes = []
    for spec in config.covariates:
        if spec["dist"] == "bernoulli":
            p = float(spec.get("p", 0.5))
            axes.append((np.array([0.0, 1.0]), np.array([1 - p, p])))
        else:
            x, w = np.polynomial.hermite_e.hermegauss(order)
            axes.append((spec.get("mean", 0.0) + spec.get("sd", 1.0) * x,
                         w / w.sum()))
    grids = np.meshgrid(*[a[0] for a in axes], indexing="ij")
    wgrid = np.meshgrid(*[a[1] for a in axes], indexing="ij")
    nodes = np.column_stack([g.ravel() for g in grids])
    weights = np.prod(np.column_stack([g.ravel() for g in wgrid]), axis=1)
    return nodes, weights


def _event_probability_given_z(config, eta):
    cens = config.censoring
    tau = config.tau
    scale = math.exp(eta)
    if cens["type"] == "administrative":
        return 1.0 - math.exp(-_baseline_cumhaz(config, tau) * scale)

    if cens["type"] == "exponential":
        rate = float(cens["rate"])

        def surv_c(t):
            return math.exp(-rate * t)
    else:
        low, high = float(cens["low"]), float(cens["high"])

        def surv_c(t):
            return min(1.0, max(0.0, (high - t) / (high - low)))

    def integrand(t):
        # failure density times P(C >= t)
        if config.baseline["family"] == "exponential":
            haz = float(config.baseline["rate"])
        else:
            k = float(config.baseline["shape"])
            s = float(config.baseline["scale"])
            haz = k / s * (t / s) ** (k - 1) if t > 0 else (
                0.0 if k > 1 else (1 / s if k == 1 else math.inf))
        return haz * scale * math.exp(-_baseline_cumhaz(config, t) * scale) \
            * surv_c(t)

    upper = tau
    if cens["type"] == "uniform":
        upper = min(upper, float(cens["high"]))
    val, _ = integrate.quad(integrand, 0.0, upper, limit=200)
    return val


def expected_event_fraction(config):
    """``P(Delta = 1)`` under the scenario, by quadrature over ``Z``."""
    nodes, weights = _covariate_nodes(config)
    beta = np.asarray(config.beta_true)
    return float(sum(w * _event_probability_given_z(config, float(z @ beta))
                     for z, w in zip(nodes, weights)))


def stratum_probabilities(config):
    """Exact probability of each stratum label under the scenario."""
    nodes, weights = _covariate_nodes(config)
    beta = np.asarray(config.beta_true)
    src = int(config.aux.get("source", 0))
    sd = float(config.aux.get("noise_sd", 0.0))
    thr = float(config.aux.get("threshold", 0.5))
    out = {}
    for z, w in zip(nodes, weights):
        pe = _event_probability_given_z(config, float(z @ beta))
        if sd > 0:
            pa = float(special.ndtr((z[src] - thr) / sd))
        else:
            pa = float(z[src] > thr)
        for d, p_d in ((1, pe), (0, 1.0 - pe)):
            for a, p_a in ((1, pa), (0, 1.0 - pa)):
                label = int(_classify(config, np.array([d]),
                                      np.array([a]))[0])
                out[label] = out.get(label, 0.0) + w * p_d * p_a
    return {j: p for j, p in out.items() if p > 0}


# -- replicates --------------------------------------------------------------

@dataclass
class ReplicateResult:
    index: int
    seed_used: list
    converged: bool
    beta_hat: np.ndarray = None
    se_model: np.ndarray = None
    se_bernoulli: np.ndarray = None
    se_fp: np.ndarray = None
    covariances: dict = field(default_factory=dict)
    beta_full: np.ndarray = None
    n_sampled: int = 0
    n_events: int = 0
    error: str = ""

    def to_row(self, p):
        row = {"replicate": self.index,
               "seed": "-".join(str(s) for s in self.seed_used),
               "converged": int(self.converged),
               "n_sampled": self.n_sampled, "n_events": self.n_events}
        for name in ("beta_hat", "se_model", "se_bernoulli", "se_fp",
                     "beta_full"):
            val = getattr(self, name)
            for k in range(p):
                row[f"{name}_{k}"] = (repr(float(val[k]))
                                      if val is not None else "")
        row["error"] = self.error
        return row


def replicate_rng(master_seed, index):
    """Independent generator for replicate ``index``."""
    return np.random.default_rng(np.random.SeedSequence(
        [int(master_seed), int(index)]))


def simulate_replicate_data(config, index):
    """Cohort and phase-two indicators of replicate ``index``."""
    rng = replicate_rng(config.master_seed, index)
    cohort = generate_cohort(config, rng)
    sampled = draw_phase_two(cohort.strata, config.design, rng, aux=cohort.aux)
    return cohort, sampled


def run_replicate(config, index, options=None):
    """Run one replicate; failures are recorded, never raised."""
    seed = [int(config.master_seed), int(index)]
    cohort, sampled = simulate_replicate_data(config, index)
    result = ReplicateResult(index=index, seed_used=seed, converged=False,
                             n_sampled=int(sampled.sum()),
                             n_events=int(cohort.status.sum()))
    try:
        wfit = compute_weights(None, config.design, strata=cohort.strata,
                               sampled=sampled, aux=cohort.aux)
        data = cohort.phase_two_data(wfit.weights)
        fit = fit_wl_cox(data, options)
        report = variance_report(fit, wfit)
    except (WLCoxError, np.linalg.LinAlgError, ArithmeticError) as exc:
        result.error = f"{type(exc).__name__}: {exc}"
        return result
    result.converged = True
    result.beta_hat = fit.beta_hat
    result.covariances = dict(report.covariances)
    result.se_model = report.standard_errors("model_based")
    result.se_bernoulli = report.standard_errors("bernoulli_known")
    if "fp_or_estimated" in report:
        result.se_fp = report.standard_errors("fp_or_estimated")
    if config.full_cohort_fit:
        try:
            result.beta_full = fit_wl_cox(cohort.full_data(), options).beta_hat
        except WLCoxError:
            pass
    return result


def _run_chunk(args):
    config, indices, options = args
    return [run_replicate(config, r, options) for r in indices]


def run_replicates(config, replicates=None, n_jobs=1, options=None):
    """Replicate results in index order, optionally across processes."""
    count = int(config.replicates if replicates is None else replicates)
    indices = list(range(count))
    if n_jobs is None or n_jobs <= 1 or count < 2:
        return [run_replicate(config, r, options) for r in indices]
    chunks = [indices[k::n_jobs] for k in range(n_jobs)]
    chunks = [c for c in chunks if c]
    with ProcessPoolExecutor(max_workers=len(chunks)) as pool:
        parts = list(pool.map(_run_chunk,
                              [(config, c, options) for c in chunks]))
    results = [res for part in parts for res in part]
    return sorted(results, key=lambda res: res.index)


@dataclass
class StudySummary:
    """Across-replicate summary of a Monte Carlo study."""

    beta_true: np.ndarray
    n_replicates: int
    n_converged: int
    failure_rate: float
    mean_beta: np.ndarray
    empirical_cov: np.ndarray
    mean_cov: dict
    coverage: dict
    mc_error: dict
    replicates: list = field(default_factory=list)

    @property
    def valid(self):
        """False if more than 2% of replicates failed."""
        return self.failure_rate <= 0.02

    def to_dict(self):
        return {
            "schema_version": "1.0",
            "beta_true": self.beta_true.tolist(),
            "n_replicates": self.n_replicates,
            "n_converged": self.n_converged,
            "failure_rate": self.failure_rate,
            "valid": self.valid,
            "mean_beta": self.mean_beta.tolist(),
            "empirical_cov": self.empirical_cov.tolist(),
            "mean_cov": {k: v.tolist() for k, v in self.mean_cov.items()},
            "coverage": {k: v.tolist() for k, v in self.coverage.items()},
            "mc_error": {k: (v.tolist() if hasattr(v, "tolist") else
                             {kk: vv.tolist() for kk, vv in v.items()})
                         for k, v in self.mc_error.items()},
        }


def summarize(results, beta_true, level=0.95):
    """Aggregate replicate results in index order."""
    beta_true = np.asarray(beta_true, float)
    ok = [r for r in sorted(results, key=lambda r: r.index) if r.converged]
    n_rep = len(results)
    fail = 1.0 - len(ok) / n_rep if n_rep else 1.0
    p = beta_true.size
    if len(ok) < 2:
        nan = np.full((p, p), np.nan)
        return StudySummary(beta_true, n_rep, len(ok), fail,
                            np.full(p, np.nan), nan, {}, {}, {}, list(results))
    betas = np.array([r.beta_hat for r in ok])
    mean_beta = betas.mean(axis=0)
    centered = betas - mean_beta
    emp = centered.T @ centered / (len(ok) - 1)
    # standard error of each empirical variance from the fourth moment
    sq = centered ** 2
    emp_var_se = sq.std(axis=0, ddof=1) / np.sqrt(len(ok))

    zcrit = stats.norm.ppf(0.5 + level / 2)
    keys = [k for k in ok[0].covariances
            if all(k in r.covariances for r in ok)]
    mean_cov, coverage, mean_var_se, cov_se = {}, {}, {}, {}
    for key in keys:
        covs = np.array([r.covariances[key] for r in ok])
        mean_cov[key] = covs.mean(axis=0)
        diag = np.diagonal(covs, axis1=1, axis2=2)
        mean_var_se[key] = diag.std(axis=0, ddof=1) / np.sqrt(len(ok))
        se = np.sqrt(np.clip(diag, 0, None))
        hit = np.abs(betas - beta_true) <= zcrit * se
        coverage[key] = hit.mean(axis=0)
        cov_se[key] = np.sqrt(coverage[key] * (1 - coverage[key]) / len(ok))
    mc_error = {"empirical_var_se": emp_var_se, "mean_var_se": mean_var_se,
                "coverage_se": cov_se,
                "mean_beta_se": betas.std(axis=0, ddof=1) / np.sqrt(len(ok))}
    return StudySummary(beta_true, n_rep, len(ok), fail, mean_beta, emp,
                        mean_cov, coverage, mc_error, list(results))


def run_study(config, replicates=None, n_jobs=1, options=None):
    """Run every replicate of ``config`` and summarize.

    Per-replicate model failures are recorded (``converged=False``) and
    counted in ``failure_rate``; only an invalid configuration raises.
    """
    config.validate()
    results = run_replicates(config, replicates, n_jobs, options)
    return summarize(results, config.beta_true)


# -- expansion diagnostic ----------------------------------------------------

def _true_alpha(config, wfit):
    design = config.design
    if design.mode == "estimated_stratified":
        return np.array([design.known_probs[j] for j in wfit.alpha_labels])
    return np.asarray(design.true_alpha, dtype=float)


def _true_pi(config, cohort, wfit, alpha0):
    design = config.design
    pi0 = np.ones(cohort.n_subjects)
    free = ~wfit.always_sampled
    if design.mode == "estimated_stratified":
        pi_dot = np.zeros((cohort.n_subjects, alpha0.size))
        for col, j in enumerate(wfit.alpha_labels):
            mask = (cohort.strata == j) & free
            pi0[mask] = alpha0[col]
            pi_dot[mask, col] = 1.0
        return pi0, pi_dot
    x = logistic_design_matrix(cohort.aux, design)
    p = special.expit(x @ alpha0)
    pi0[free] = p[free]
    pi_dot = np.where(free[:, None], (p * (1 - p))[:, None] * x, 0.0)
    return pi0, pi_dot


def weight_expansion_terms(config, index, force_true_alpha=False,
                           options=None):
    """Both sides of the weight-estimation expansion for one replicate.

    Returns ``(lhs, rhs)`` where ``lhs = sqrt(N) (P_N^{pi_hat} -
    P_N^{pi_0}) l~`` and ``rhs = -[(1/N) sum 1[V0^c] xi l~ pi_dot_0^T /
    pi_0^2] sqrt(N) (alpha_hat - alpha_0)``, with ``l~`` the influence
    estimates of the fit that uses the true probabilities.
    """
    cohort, sampled = simulate_replicate_data(config, index)
    n = cohort.n_subjects
    wfit = compute_weights(None, config.design, strata=cohort.strata,
                           sampled=sampled, aux=cohort.aux)
    alpha0 = _true_alpha(config, wfit)
    pi0, pi_dot0 = _true_pi(config, cohort, wfit, alpha0)
    if force_true_alpha:
        pi_hat, alpha_hat = pi0, alpha0
    else:
        # degenerate strata are pinned at pi = 1 by the estimator
        pi_hat, alpha_hat = wfit.pi, wfit.alpha
    w0 = np.where(sampled, 1.0 / pi0, 0.0)
    fit = fit_wl_cox(cohort.phase_two_data(w0), options)
    ell = fit.influence
    free = ~wfit.always_sampled & sampled
    diff = np.where(free, 1.0 / pi_hat - 1.0 / pi0, 0.0)
    lhs = (diff[:, None] * ell).sum(axis=0) / math.sqrt(n)
    c = (ell * np.where(free, 1.0 / pi0 ** 2, 0.0)[:, None]).T @ pi_dot0 / n
    rhs = -c @ (math.sqrt(n) * (alpha_hat - alpha0))
    return lhs, rhs


def weight_expansion_diagnostic(config, replicates=None,
                                force_true_alpha=False, options=None):
    """RMS size of the remainder of the weight-estimation expansion.

    Returns a dict with the across-replicate RMS of ``lhs``, of
    ``lhs - rhs`` and their ratio, which should shrink as ``N`` grows.

    Raises
    ------
    DesignError
        If the design does not estimate its weights under Bernoulli
        sampling (``estimated_stratified`` or ``estimated_logistic``).
    """
    if config.design.mode not in ("estimated_stratified",
                                  "estimated_logistic"):
        raise DesignError("the expansion diagnostic needs a Bernoulli design "
                          "with estimated weights")
    count = int(config.replicates if replicates is None else replicates)
    sq_lhs, sq_diff, used = 0.0, 0.0, 0
    for r in range(count):
        try:
            lhs, rhs = weight_expansion_terms(config, r, force_true_alpha,
                                              options)
        except WLCoxError:
            continue
        sq_lhs += float(lhs @ lhs)
        sq_diff += float((lhs - rhs) @ (lhs - rhs))
        used += 1
    if used == 0:
        raise DesignError("no replicate could be fitted")
    rms_lhs = math.sqrt(sq_lhs / used)
    rms_diff = math.sqrt(sq_diff / used)
    ratio = rms_diff / rms_lhs if rms_lhs > 0 else 0.0
    return {"n_subjects": int(config.n_subjects), "replicates": used,
            "rms_lhs": rms_lhs, "rms_remainder": rms_diff, "ratio": ratio}


# names used by the external interface
appendix_c_terms = weight_expansion_terms
appendix_c_diagnostic = weight_expansion_diagnostic
