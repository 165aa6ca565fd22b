"""Two-phase sampling designs: inclusion probabilities and their influence.

A design is declared once (:class:`SamplingDesign`) and applied to the
phase-one records to produce a :class:`WeightFit`, which carries the
per-subject probabilities ``pi_i`` and, for designs whose probabilities
are estimated, the influence contributions of the estimated parameter
``alpha``.  Stratum label 0, and any label listed in
``always_sampled_strata``, denotes the always-sampled stratum ``V0``.
"""

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .exceptions import ConvergenceError, DesignError, SchemaError

MODES = ("bernoulli_known", "finite_population", "estimated_stratified",
         "estimated_logistic")


@dataclass
class PhaseOneRecord:
    subject_id: object
    stratum: int
    sampled: bool
    aux: tuple = ()


@dataclass
class SamplingDesign:
    """Declaration of the phase-two sampling model.

    Parameters
    ----------
    mode : str
        One of ``bernoulli_known``, ``finite_population``,
        ``estimated_stratified`` or ``estimated_logistic``.
    known_probs : dict, optional
        Stratum label -> sampling probability ``p_j``.  Required for
        ``bernoulli_known``; in simulation it is also the true
        probability used to draw phase two (``n_j = round(p_j N_j)`` for
        finite-population draws unless ``sample_sizes`` is given).
    always_sampled_strata : tuple of int
        Labels of ``V0`` in addition to 0.
    logistic_intercept, logistic_aux : bool, tuple of int
        Linear predictor of the logistic inclusion model: an optional
        intercept plus the listed auxiliary columns.
    true_alpha : array-like, optional
        Simulation only: coefficients of the logistic model used to draw.
    sample_sizes : dict, optional
        Finite-population draws only: stratum label -> ``n_j``.
    sigma_min : float
        Smallest admissible inclusion probability of a sampled subject.
    """

    mode: str
    known_probs: dict = field(default_factory=dict)
    always_sampled_strata: tuple = ()
    logistic_intercept: bool = True
    logistic_aux: tuple = ()
    true_alpha: object = None
    sample_sizes: dict = field(default_factory=dict)
    sigma_min: float = 1e-3

    def __post_init__(self):
        if self.mode not in MODES:
            raise DesignError(f"unknown design mode {self.mode!r}; expected "
                              f"one of {', '.join(MODES)}")
        self.known_probs = {int(k): float(v)
                            for k, v in self.known_probs.items()}
        self.sample_sizes = {int(k): int(v)
                             for k, v in self.sample_sizes.items()}
        self.always_sampled_strata = tuple(
            int(s) for s in self.always_sampled_strata)
        self.logistic_aux = tuple(int(a) for a in self.logistic_aux)
        if not 0 < self.sigma_min <= 1:
            raise DesignError("sigma_min must lie in (0, 1]")
        for j, p in self.known_probs.items():
            if not 0 <= p <= 1:
                raise DesignError(f"probability for stratum {j} is {p}, "
                                  "outside [0, 1]")
        if self.mode == "estimated_logistic" and not (
                self.logistic_intercept or self.logistic_aux):
            raise DesignError("logistic model needs an intercept or at "
                              "least one auxiliary column")

    def is_always_sampled(self, strata):
        strata = np.asarray(strata)
        return (strata == 0) | np.isin(strata, self.always_sampled_strata)

    @property
    def is_estimated(self):
        return self.mode != "bernoulli_known"

    @classmethod
    def from_dict(cls, spec, aux_names=None):
        """Build a design from its JSON declaration.

        ``logistic_formula.aux_columns`` may hold integer positions or,
        when ``aux_names`` is given, auxiliary column names.
        """
        if not isinstance(spec, dict):
            raise SchemaError("design must be a JSON object", path="$")
        if "mode" not in spec:
            raise SchemaError("missing required key", path="$.mode")
        formula = spec.get("logistic_formula") or {}
        aux = []
        for k, col in enumerate(formula.get("aux_columns", [])):
            if isinstance(col, str):
                names = list(aux_names or [])
                key = col if col in names else f"aux.{col}"
                if key not in names:
                    raise SchemaError(
                        f"unknown auxiliary column {col!r}",
                        path=f"$.logistic_formula.aux_columns[{k}]")
                aux.append(names.index(key))
            else:
                aux.append(int(col))
        try:
            return cls(
                mode=spec["mode"],
                known_probs=spec.get("known_probs", {}),
                always_sampled_strata=spec.get("always_sampled_strata", ()),
                logistic_intercept=formula.get("intercept", True),
                logistic_aux=aux,
                true_alpha=spec.get("true_alpha"),
                sample_sizes=spec.get("sample_sizes", {}),
                sigma_min=spec.get("sigma_min", 1e-3),
            )
        except (TypeError, ValueError) as exc:
            raise SchemaError(f"invalid design: {exc}", path="$") from exc

    @classmethod
    def from_json(cls, path, aux_names=None):
        with open(path, encoding="utf-8") as fh:
            try:
                spec = json.load(fh)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"design file is not valid JSON: {exc}",
                                  path="$") from exc
        return cls.from_dict(spec, aux_names=aux_names)

    def to_dict(self):
        out = {
            "mode": self.mode,
            "always_sampled_strata": list(self.always_sampled_strata),
            "known_probs": {str(k): v for k, v in self.known_probs.items()},
            "sigma_min": self.sigma_min,
        }
        if self.mode == "estimated_logistic":
            out["logistic_formula"] = {"intercept": self.logistic_intercept,
                                       "aux_columns": list(self.logistic_aux)}
        if self.true_alpha is not None:
            out["true_alpha"] = list(np.asarray(self.true_alpha, float))
        if self.sample_sizes:
            out["sample_sizes"] = {str(k): v
                                   for k, v in self.sample_sizes.items()}
        return out


@dataclass
class WeightFit:
    """Inclusion probabilities and the influence of their estimation.

    Attributes
    ----------
    pi : ndarray of shape (N,)
        ``pi_i``; 1 on ``V0``.
    alpha : ndarray of shape (q,)
        Estimated inclusion-model parameter (empty for known designs).
    alpha_influence : ndarray of shape (N, q)
        Per-subject influence contributions of ``alpha``; zero rows on
        ``V0``.
    pi_dot : ndarray of shape (N, q)
        Derivative of ``pi_alpha(V_i)`` with respect to ``alpha``.
    stratum_counts : dict
        Stratum label -> ``(N_j, n_j)``.
    strata, sampled : ndarray of shape (N,)
    always_sampled : ndarray of bool, shape (N,)
    """

    pi: np.ndarray
    alpha: np.ndarray
    alpha_influence: np.ndarray
    pi_dot: np.ndarray
    stratum_counts: dict
    strata: np.ndarray
    sampled: np.ndarray
    always_sampled: np.ndarray
    mode: str
    alpha_labels: list = field(default_factory=list)
    iterations: list = field(default_factory=list)

    @property
    def weights(self):
        """IPW weights ``xi_i / pi_i``."""
        return np.where(self.sampled, 1.0 / self.pi, 0.0)

    @property
    def n_subjects(self):
        return self.pi.shape[0]


def _as_arrays(records):
    strata = np.array([int(r.stratum) for r in records])
    sampled = np.array([bool(r.sampled) for r in records])
    width = {len(r.aux) for r in records}
    if len(width) == 1:
        aux = np.array([np.asarray(r.aux, dtype=float) for r in records])
        aux = aux.reshape(len(records), -1)
    else:
        aux = None
    return strata, sampled, aux


def stratum_table(strata, sampled):
    labels = np.unique(strata)
    return {int(j): (int(np.sum(strata == j)),
                     int(np.sum(sampled[strata == j]))) for j in labels}


def compute_weights(records, design, *, strata=None, sampled=None, aux=None,
                    known_pi=None):
    """Inclusion probabilities for the phase-one records under ``design``.

    Records may be passed as a list of :class:`PhaseOneRecord` or as
    arrays through the keyword arguments (``records=None``).  For
    ``bernoulli_known`` designs, ``known_pi`` supplies per-subject
    probabilities that take precedence over ``design.known_probs``.

    Raises
    ------
    DesignError
        On a stratum with no sampled subjects (estimated modes), a
        probability below ``design.sigma_min`` for a sampled subject, or a
        ``V0`` subject that was not sampled.
    """
    if records is not None:
        strata, sampled, aux = _as_arrays(records)
    strata = np.asarray(strata).astype(int)
    sampled = np.asarray(sampled).astype(bool)
    n = strata.shape[0]
    if n == 0:
        raise DesignError("no phase-one records")
    v0 = design.is_always_sampled(strata)
    if np.any(v0 & ~sampled):
        bad = int(np.flatnonzero(v0 & ~sampled)[0])
        raise DesignError("always-sampled stratum contains an unsampled "
                          f"subject (index {bad})", index=bad)
    counts = stratum_table(strata, sampled)
    pi = np.ones(n)

    if design.mode == "bernoulli_known" and known_pi is not None:
        known_pi = np.asarray(known_pi, dtype=float)
        given = ~np.isnan(known_pi)
        pi[given & ~v0] = known_pi[given & ~v0]
        if np.any(sampled & ~given & ~v0):
            raise DesignError("sampled subject without a known probability")
        if np.any((pi <= 0) | (pi > 1)):
            raise DesignError("known probabilities must lie in (0, 1]")
        alpha = np.zeros(0)
        infl = np.zeros((n, 0))
        pi_dot = np.zeros((n, 0))
        iterations = []
        alpha_labels = []
    elif design.mode == "bernoulli_known":
        for j in counts:
            mask = (strata == j) & ~v0
            if not mask.any():
                continue
            if j not in design.known_probs:
                raise DesignError(f"no known probability for stratum {j}",
                                  stratum=j)
            if design.known_probs[j] < design.sigma_min:
                raise DesignError(
                    f"stratum {j} has known probability "
                    f"{design.known_probs[j]} below sigma_min="
                    f"{design.sigma_min}", stratum=j)
            pi[mask] = design.known_probs[j]
        alpha = np.zeros(0)
        infl = np.zeros((n, 0))
        pi_dot = np.zeros((n, 0))
        iterations = []
        alpha_labels = []
    elif design.mode in ("finite_population", "estimated_stratified"):
        labels = [j for j in counts if not np.all(v0[strata == j])]
        alpha = np.ones(len(labels))
        infl = np.zeros((n, len(labels)))
        pi_dot = np.zeros((n, len(labels)))
        for col, j in enumerate(labels):
            n_total, n_samp = counts[j]
            if n_samp == 0:
                raise DesignError(f"stratum {j} has no sampled subjects",
                                  stratum=j)
            mask = strata == j
            frac = n_samp / n_total
            alpha[col] = frac
            pi[mask] = frac
            pi_dot[mask, col] = 1.0
            if n_samp < n_total:
                # I^-1 pi_dot (xi - pi) / (pi (1 - pi)), I_jj = nu_j / (a(1-a))
                infl[mask, col] = (sampled[mask] - frac) / (n_total / n)
        iterations = []
        alpha_labels = labels
    else:
        if aux is None:
            raise DesignError("logistic design requires auxiliary "
                              "variables on every record")
        x = logistic_design_matrix(aux, design)
        mask = ~v0
        alpha, rows, iterations = fit_logistic_alpha(x[mask], sampled[mask],
                                                     n_total=n)
        pi[mask] = expit(x[mask] @ alpha)
        infl = np.zeros((n, alpha.size))
        infl[mask] = rows
        pi_dot = np.zeros((n, alpha.size))
        pi_dot[mask] = (pi[mask] * (1 - pi[mask]))[:, None] * x[mask]
        alpha_labels = (["intercept"] if design.logistic_intercept else []) \
            + [f"aux[{a}]" for a in design.logistic_aux]

    low = sampled & (pi < design.sigma_min)
    if np.any(low):
        j = int(strata[np.flatnonzero(low)[0]])
        raise DesignError(
            f"inclusion probability {pi[low].min():.3g} below sigma_min="
            f"{design.sigma_min} (stratum {j})", stratum=j)
    return WeightFit(pi=pi, alpha=np.asarray(alpha, float),
                     alpha_influence=infl, pi_dot=pi_dot,
                     stratum_counts=counts, strata=strata, sampled=sampled,
                     always_sampled=v0, mode=design.mode,
                     alpha_labels=list(alpha_labels), iterations=iterations)


def logistic_design_matrix(aux, design):
    aux = np.asarray(aux, dtype=float)
    if aux.ndim == 1:
        aux = aux.reshape(-1, 1)
    cols = []
    if design.logistic_intercept:
        cols.append(np.ones(aux.shape[0]))
    for a in design.logistic_aux:
        if a >= aux.shape[1]:
            raise DesignError(f"auxiliary column {a} not present")
        cols.append(aux[:, a])
    return np.column_stack(cols)


def fit_logistic_alpha(x, sampled, *, n_total=None, tol=1e-10, max_iter=50,
                       max_norm=50.0):
    """Maximum-likelihood logistic inclusion model on the non-``V0`` subjects.

    Damped Newton on the concave Bernoulli log-likelihood.

    Parameters
    ----------
    x : ndarray of shape (m, q)
        Design matrix of the subjects outside ``V0``.
    sampled : ndarray of shape (m,)
        Inclusion indicators ``xi``.
    n_total : int, optional
        Phase-one size ``N`` used to normalize the information; defaults
        to ``m``.

    Returns
    -------
    alpha : ndarray of shape (q,)
    influence : ndarray of shape (m, q)
        Rows ``I^-1 pi_dot_i (xi_i - pi_i) / (pi_i (1 - pi_i))``, which for
        the logistic link reduce to ``I^-1 x_i (xi_i - pi_i)``.
    trace : list of dict
        Per-iteration mean-score norm and step length.
    """
    x = np.asarray(x, dtype=float)
    xi = np.asarray(sampled, dtype=float)
    m, q = x.shape
    n_total = m if n_total is None else n_total
    if np.linalg.matrix_rank(x) < q:
        raise DesignError("logistic design matrix is rank deficient")

    def loglik(a):
        eta = x @ a
        return float(np.sum(xi * eta - np.logaddexp(0.0, eta)))

    alpha = np.zeros(q)
    ll = loglik(alpha)
    trace = []
    for it in range(max_iter):
        p = expit(x @ alpha)
        score = x.T @ (xi - p) / m
        norm = float(np.linalg.norm(score))
        if norm <= tol:
            trace.append({"iteration": it, "score_norm": norm, "step": 0.0})
            break
        info = (x * (p * (1 - p))[:, None]).T @ x / m
        step = np.linalg.solve(info, score)
        t = 1.0
        for _ in range(30):
            cand = alpha + t * step
            cand_ll = loglik(cand)
            if cand_ll >= ll:
                break
            t *= 0.5
        alpha, ll = cand, cand_ll
        trace.append({"iteration": it, "score_norm": norm, "step": t})
        if np.linalg.norm(alpha) > max_norm:
            raise ConvergenceError(
                "logistic inclusion model diverges (separation)",
                trace=trace)
    else:
        raise ConvergenceError("logistic inclusion model did not converge",
                               trace=trace)

    p = expit(x @ alpha)
    info = (x * (p * (1 - p))[:, None]).T @ x / n_total
    influence = np.linalg.solve(info, (x * (xi - p)[:, None]).T).T
    return alpha, influence, trace


def draw_phase_two(strata, design, rng, aux=None):
    """Draw phase-two inclusion indicators.

    ``bernoulli_known`` and ``estimated_stratified`` flip independent coins
    with probability ``known_probs[j]``; ``estimated_logistic`` uses the
    logistic model at ``true_alpha``; ``finite_population`` draws exactly
    ``n_j`` subjects without replacement from each stratum.  ``V0`` is
    always fully sampled.

    Parameters
    ----------
    strata : array-like of int, shape (N,)
    design : SamplingDesign
    rng : numpy.random.Generator
        Owned by the caller; never share one across threads.
    aux : ndarray, optional
        Auxiliary variables (logistic designs only).

    Returns
    -------
    ndarray of bool, shape (N,)
    """
    strata = np.asarray(strata).astype(int)
    v0 = design.is_always_sampled(strata)
    xi = v0.copy()
    labels = [j for j in np.unique(strata) if not np.all(v0[strata == j])]

    if design.mode == "finite_population":
        for j in labels:
            idx = np.flatnonzero((strata == j) & ~v0)
            if j in design.sample_sizes:
                n_j = design.sample_sizes[j]
            elif j in design.known_probs:
                n_j = int(round(design.known_probs[j] * idx.size))
            else:
                raise DesignError(f"no sample size for stratum {j}", stratum=j)
            if n_j > idx.size:
                raise DesignError(f"cannot draw {n_j} subjects from stratum "
                                  f"{j} of size {idx.size}", stratum=j)
            # partial Fisher-Yates shuffle: every n_j-subset equally likely
            xi[rng.choice(idx, size=n_j, replace=False)] = True
        return xi

    if design.mode == "estimated_logistic":
        if design.true_alpha is None or aux is None:
            raise DesignError("logistic draws need true_alpha and aux")
        x = logistic_design_matrix(aux, design)
        p = expit(x @ np.asarray(design.true_alpha, dtype=float))
    else:
        p = np.ones(strata.shape[0])
        for j in labels:
            if j not in design.known_probs:
                raise DesignError(f"no probability for stratum {j}", stratum=j)
            p[strata == j] = design.known_probs[j]
    u = rng.random(strata.shape[0])
    return v0 | (u < p)
