"""Command-line interface.

Exit codes: 0 success, 1 I/O or schema error, 2 model error.  Errors are
written as a JSON object ``{"error": {...}}``.
"""

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .design import SamplingDesign, compute_weights
from .estimator import SolverOptions, fit_wl_cox
from .exceptions import SchemaError, WLCoxError
from .io import REPORT_SCHEMA_VERSION, read_input_table, write_input_table
from .simlab import (ScenarioConfig, weight_expansion_diagnostic, run_study,
                     simulate_replicate_data)
from .survival_core import CohortData
from .variance import variance_report


def _emit(obj, out):
    text = json.dumps(obj, indent=2)
    if out:
        Path(out).write_text(text + "\n", encoding="utf-8")
    else:
        sys.stdout.write(text + "\n")


def _fail(exc, code, out=None):
    payload = {"schema_version": REPORT_SCHEMA_VERSION,
               "error": exc.to_dict() if hasattr(exc, "to_dict") else
               {"code": "io_error", "message": str(exc)}}
    sys.stderr.write(json.dumps(payload) + "\n")
    if out:
        try:
            _emit(payload, out)
        except OSError:
            pass
    return code


def build_fit_report(table, design, options=None):
    """Run weights -> fit -> variances and assemble the JSON report."""
    weights = compute_weights(None, design, strata=table.strata,
                              sampled=table.sampled, aux=table.aux,
                              known_pi=table.pi)
    data = CohortData(table.times, table.status, table.covariates,
                      weights.weights)
    fit = fit_wl_cox(data, options)
    report = variance_report(fit, weights)
    cum = np.cumsum(fit.hazard.jumps)
    strata = []
    for j, (n_total, n_samp) in sorted(weights.stratum_counts.items()):
        mask = weights.strata == j
        strata.append({"stratum": j, "N_j": n_total, "n_j": n_samp,
                       "always_sampled": bool(np.all(
                           weights.always_sampled[mask])),
                       "pi_mean": float(np.mean(weights.pi[mask]))})
    variances = report.to_dict(beta=fit.beta_hat)
    return {
        "schema_version": REPORT_SCHEMA_VERSION,
        "design": design.to_dict(),
        "n_phase1": fit.n_phase1,
        "n_sampled": int(weights.sampled.sum()),
        "covariates": table.covariate_names,
        "beta": fit.beta_hat.tolist(),
        "primary_estimator": report.primary,
        "se": {k: v["se"] for k, v in variances["estimators"].items()},
        "z": {k: v["z"] for k, v in variances["estimators"].items()},
        "covariance": {k: v["covariance"]
                       for k, v in variances["estimators"].items()},
        "estimators": {k: v["label"]
                       for k, v in variances["estimators"].items()},
        "residual_diagnostics": variances.get("residual_diagnostics", {}),
        "hazard": {"times": fit.hazard.jump_times.tolist(),
                   "jumps": fit.hazard.jumps.tolist(),
                   "cumulative": cum.tolist()},
        "strata": strata,
        "alpha": {"labels": [str(a) for a in weights.alpha_labels],
                  "values": weights.alpha.tolist()},
        "convergence": {"converged": fit.converged,
                        "iterations": fit.iterations},
    }


def cmd_fit(args):
    try:
        table = read_input_table(args.data)
        design = SamplingDesign.from_json(args.design,
                                          aux_names=table.aux_names)
    except (SchemaError, OSError) as exc:
        return _fail(exc, 1, args.out)
    except WLCoxError as exc:
        return _fail(exc, 1, args.out)
    options = SolverOptions(max_iter=args.max_iter)
    try:
        report = build_fit_report(table, design, options)
    except WLCoxError as exc:
        return _fail(exc, 2, args.out)
    try:
        _emit(report, args.out)
    except OSError as exc:
        return _fail(exc, 1)
    return 0


def _load_scenario(args):
    config = ScenarioConfig.from_json(args.config)
    if args.seed is not None:
        config = config.replace(master_seed=args.seed)
    return config


def cmd_simulate(args):
    try:
        config = _load_scenario(args)
        if args.replicates is not None:
            config = config.replace(replicates=args.replicates)
    except (SchemaError, OSError) as exc:
        return _fail(exc, 1)
    summary = run_study(config, n_jobs=args.threads)
    out_dir = Path(args.out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        doc = summary.to_dict()
        doc["scenario"] = config.to_dict()
        (out_dir / "summary.json").write_text(json.dumps(doc, indent=2)
                                              + "\n", encoding="utf-8")
        rows = [r.to_row(len(config.beta_true)) for r in summary.replicates]
        with open(out_dir / "replicates.csv", "w", newline="",
                  encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
            writer.writeheader()
            writer.writerows(rows)
    except OSError as exc:
        return _fail(exc, 1)
    return 0


def cmd_cohort(args):
    try:
        config = _load_scenario(args)
    except (SchemaError, OSError) as exc:
        return _fail(exc, 1)
    cohort, sampled = simulate_replicate_data(config, args.replicate)
    pi = None
    if config.design.mode == "bernoulli_known":
        v0 = config.design.is_always_sampled(cohort.strata)
        pi = np.array([1.0 if v else config.design.known_probs.get(int(j),
                                                                   np.nan)
                       for j, v in zip(cohort.strata, v0)])
    try:
        write_input_table(args.out, cohort.times, cohort.status,
                          cohort.covariates, cohort.strata, sampled,
                          aux=cohort.aux, pi=pi, aux_names=["aux.v"])
    except OSError as exc:
        return _fail(exc, 1)
    return 0


def cmd_diagnose(args):
    try:
        config = _load_scenario(args)
    except (SchemaError, OSError) as exc:
        return _fail(exc, 1)
    rows = []
    try:
        for n in args.sizes:
            rows.append(weight_expansion_diagnostic(
                config.replace(n_subjects=n), replicates=args.replicates))
    except WLCoxError as exc:
        return _fail(exc, 2)
    ratios = [r["ratio"] for r in rows]
    _emit({"schema_version": REPORT_SCHEMA_VERSION, "sizes": rows,
           "monotone_decreasing": bool(np.all(np.diff(ratios) < 0))},
          args.out)
    return 0


def make_parser():
    parser = argparse.ArgumentParser(
        prog="wlcox",
        description="Weighted-likelihood Cox regression for two-phase "
                    "stratified samples.")
    parser.add_argument("--version", action="version",
                        version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit a two-phase Cox model to a CSV table")
    p.add_argument("data", help="input table (CSV)")
    p.add_argument("--design", required=True, help="design declaration (JSON)")
    p.add_argument("--out", help="report path (default: stdout)")
    p.add_argument("--max-iter", type=int, default=25)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("simulate", help="run a Monte Carlo study")
    p.add_argument("config", help="scenario config (JSON)")
    p.add_argument("--replicates", type=int)
    p.add_argument("--seed", type=int, help="override master_seed")
    p.add_argument("--threads", type=int, default=1,
                   help="worker processes; output does not depend on it")
    p.add_argument("--out-dir", default=".",
                   help="directory for summary.json and replicates.csv")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("cohort", help="write one replicate's cohort as CSV")
    p.add_argument("config")
    p.add_argument("--replicate", type=int, default=0)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_cohort)

    p = sub.add_parser("diagnose",
                       help="weight-estimation expansion diagnostic")
    p.add_argument("config")
    p.add_argument("--sizes", type=int, nargs="+", default=[500, 2000, 8000])
    p.add_argument("--replicates", type=int, default=500)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_diagnose)
    return parser


def main(argv=None):
    args = make_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
