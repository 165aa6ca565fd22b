import dataclasses

import numpy as np
import pytest
from numpy.testing import assert_allclose

from wlcox import (CohortData, DesignError, SamplingDesign, compute_weights,
                   draw_phase_two, fit_wl_cox, var_bernoulli_empirical,
                   var_bernoulli_known, var_estimated_plugin, var_model_based,
                   var_residual_regression, var_stratified_closed_form,
                   variance_report)

from conftest import random_cohort
from oracles import (fd_gradient, fd_jacobian, naive_efficient_scores,
                     naive_loglik)


def stratified_case(seed, n=150, probs=None, mode="estimated_stratified"):
    """Random cohort with strata 0..J and a phase-two draw."""
    rng = np.random.default_rng(seed)
    probs = probs or {1: 0.3, 2: 0.6}
    T, D, Z, _ = random_cohort(rng, n, 2, weights="ones")
    labels = np.array(sorted(probs))
    strata = rng.choice(labels, size=n)
    strata[(D == 1) & (rng.random(n) < 0.5)] = 0
    design = SamplingDesign(mode=mode, known_probs=probs)
    sampled = draw_phase_two(strata, design, rng)
    weights = compute_weights(None, design, strata=strata, sampled=sampled)
    fit = fit_wl_cox(CohortData(T, D, Z, weights.weights))
    return fit, weights, (T, D, Z)


def psd(a, tol=1e-14):
    return np.linalg.eigvalsh(0.5 * (a + a.T)).min() >= -tol * max(
        1.0, np.abs(a).max())


def known_case(T, D, Z, sampled, pi):
    strata = np.ones(len(T), int)
    design = SamplingDesign(mode="bernoulli_known")
    w = compute_weights(None, design, strata=strata, sampled=sampled,
                        known_pi=np.full(len(T), pi))
    return fit_wl_cox(CohortData(T, D, Z, w.weights)), w


SIX = dict(T=np.array([0.5, 1.0, 1.5, 2.0, 2.5, 3.0]),
           D=np.array([1.0, 1.0, 0.0, 1.0, 1.0, 0.0]),
           Z=np.array([[0.3], [-0.4], [1.2], [0.1], [-1.0], [0.8]]),
           xi=np.array([True, True, True, False, True, True]))


class TestModelBased:
    def test_scalar_reciprocal(self, rng):
        T, D, Z, w = random_cohort(rng, 30, 1)
        fit = fit_wl_cox(CohortData(T, D, Z, w))
        assert var_model_based(fit)[0, 0] == pytest.approx(
            1 / (30 * fit.information[0, 0]))

    def test_inverse_fd_hessian(self, rng):
        T, D, Z, w = random_cohort(rng, 10, 2)
        fit = fit_wl_cox(CohortData(T, D, Z, w))
        hess = fd_jacobian(
            lambda b: fd_gradient(lambda c: naive_loglik(T, D, Z, w, c), b,
                                  h=1e-4), fit.beta_hat, h=1e-4)
        assert_allclose(var_model_based(fit), -np.linalg.inv(hess) / 10,
                        rtol=1e-3)


class TestBernoulliKnown:
    def test_fully_sampled_is_model_based(self, rng):
        T, D, Z, _ = random_cohort(rng, 40, 2, weights="ones")
        fit, w = known_case(T, D, Z, np.ones(40, bool), 1.0)
        assert np.array_equal(var_bernoulli_known(fit, w),
                              var_model_based(fit))

    def test_hand_summed_correction(self):
        T, D, Z, xi = SIX["T"], SIX["D"], SIX["Z"], SIX["xi"]
        fit, w = known_case(T, D, Z, xi, 0.5)
        weights = np.where(xi, 2.0, 0.0)
        eff = naive_efficient_scores(T, D, Z, weights, fit.beta_hat)
        inv = np.linalg.inv(fit.information)
        corr = np.zeros((1, 1))
        for i in range(6):
            if xi[i]:
                ell = inv @ eff[i]
                corr += (0.5 / 0.25) * np.outer(ell, ell)
        expect = (inv + corr / 6) / 6
        assert_allclose(var_bernoulli_known(fit, w), expect, rtol=1e-12)

    def test_duplication_halves(self, rng):
        T, D, Z, _ = random_cohort(rng, 40, 2, weights="ones")
        xi = rng.random(40) < 0.6
        xi[np.flatnonzero(D)[:3]] = True
        a = var_bernoulli_known(*known_case(T, D, Z, xi, 0.6))
        idx = np.r_[np.arange(40), np.arange(40)]
        b = var_bernoulli_known(*known_case(T[idx], D[idx], Z[idx], xi[idx],
                                            0.6))
        assert_allclose(b, a / 2, rtol=1e-8)

    def test_missing_probability(self, rng):
        fit, w, _ = stratified_case(1)
        bad = dataclasses.replace(w, pi=np.where(w.sampled, 0.0, w.pi))
        with pytest.raises(DesignError):
            var_bernoulli_known(fit, bad)


class TestResidualRegression:
    def test_no_alpha_is_empirical(self, rng):
        T, D, Z, _ = random_cohort(rng, 40, 2, weights="ones")
        fit, w = known_case(T, D, Z, rng.random(40) < 0.7, 0.7)
        assert_allclose(var_residual_regression(fit, w),
                        var_bernoulli_empirical(fit), rtol=0)
        d = fit.dfbeta
        assert_allclose(var_bernoulli_empirical(fit), d.T @ d / 40 ** 2)

    def test_direct_stratified_oracle(self):
        fit, w, _ = stratified_case(2)
        n = fit.n_phase1
        strata, xi = w.strata, w.sampled
        d = fit.dfbeta
        total = np.zeros((2, 2))
        for i in range(n):
            if strata[i] == 0:
                total += np.outer(d[i], d[i])
        for j in (1, 2):
            rows = d[(strata == j) & xi]
            n_all = np.sum(strata == j)
            p_j = len(rows) / n_all
            m = rows.mean(axis=0)
            cov = sum(np.outer(r - m, r - m) for r in rows) / len(rows)
            # phase-one spread of l~ = p_j D, plus the (1 - p_j) / p_j term
            ell = p_j * rows
            em = ell.mean(axis=0)
            second = sum(np.outer(e, e) for e in ell) / p_j
            var_j = sum(np.outer(e - em, e - em) for e in ell) / len(ell)
            total += second + n_all * (1 - p_j) / p_j * var_j
            assert_allclose(var_j, p_j ** 2 * cov, rtol=1e-12)
        expect = total / n ** 2
        got, info = var_residual_regression(fit, w, return_details=True)
        assert_allclose(got, expect, rtol=1e-8)
        assert info["closed_form_gap"] <= 1e-10
        assert all(0 <= r <= 1 for r in info["r_squared"])

    def test_duplication_halves(self):
        fit, w, (T, D, Z) = stratified_case(3)
        idx = np.r_[np.arange(len(T)), np.arange(len(T))]
        w2 = compute_weights(None, SamplingDesign("estimated_stratified"),
                             strata=w.strata[idx], sampled=w.sampled[idx])
        fit2 = fit_wl_cox(CohortData(T[idx], D[idx], Z[idx], w2.weights))
        assert_allclose(var_residual_regression(fit2, w2),
                        var_residual_regression(fit, w) / 2, rtol=1e-8)

    def test_below_total_variance(self):
        for seed in range(5):
            fit, w, _ = stratified_case(10 + seed)
            diff = (var_bernoulli_empirical(fit)
                    - var_residual_regression(fit, w))
            assert psd(diff)

    def test_rank_deficient_alpha(self):
        fit, w, _ = stratified_case(4)
        a = w.alpha_influence
        bad = dataclasses.replace(w, alpha_influence=np.column_stack([a, a]))
        with pytest.raises(DesignError):
            var_residual_regression(fit, bad)

    def test_too_few_rows(self):
        fit, w, _ = stratified_case(5)
        n = fit.n_phase1
        a = np.zeros((n, 2))
        a[0, 0], a[1, 1] = 1.0, 1.0
        tiny = dataclasses.replace(w, alpha_influence=a)
        zero = dataclasses.replace(fit, dfbeta=np.zeros_like(fit.dfbeta))
        with pytest.raises(DesignError):
            var_residual_regression(zero, tiny)


class TestStratifiedClosedForm:
    def test_fully_sampled_stratum(self, rng):
        T, D, Z, _ = random_cohort(rng, 50, 2, weights="ones")
        strata = np.ones(50, int)
        w = compute_weights(None, SamplingDesign("finite_population"),
                            strata=strata, sampled=np.ones(50, bool))
        fit = fit_wl_cox(CohortData(T, D, Z, w.weights))
        for flag in (True, False):
            assert_allclose(var_stratified_closed_form(fit, w, flag),
                            var_model_based(fit), rtol=1e-14)

    def test_second_moment_minus_variance(self):
        fit, w, _ = stratified_case(6, probs={1: 0.3, 2: 0.5, 3: 0.7})
        n = fit.n_phase1
        ell = fit.dfbeta * np.where(w.sampled, w.pi, 0.0)[:, None]
        expect = np.zeros((2, 2))
        for j, (n_all, n_s) in w.stratum_counts.items():
            if j == 0:
                continue
            p = n_s / n_all
            m = ell[(w.strata == j) & w.sampled].mean(axis=0)
            expect += n_all / n * (1 - p) / p * np.outer(m, m)
        diff = (var_stratified_closed_form(fit, w, True)
                - var_stratified_closed_form(fit, w, False))
        assert_allclose(diff, expect / n, rtol=1e-10, atol=1e-18)
        assert psd(diff)

    def test_three_strata_brute_force(self):
        fit, w, (T, D, Z) = stratified_case(
            7, probs={1: 0.25, 2: 0.4, 3: 0.8})
        n = fit.n_phase1
        eff = naive_efficient_scores(T, D, Z, w.weights, fit.beta_hat)
        inv = np.linalg.inv(fit.information)
        total = inv.copy()
        for j in (1, 2, 3):
            members = [i for i in range(n) if w.strata[i] == j]
            chosen = [i for i in members if w.sampled[i]]
            p = len(chosen) / len(members)
            ells = [inv @ eff[i] for i in chosen]
            mean = sum(ells) / len(ells)
            var = sum(np.outer(e - mean, e - mean) for e in ells) / len(ells)
            total += len(members) / n * (1 - p) / p * var
        assert_allclose(var_stratified_closed_form(fit, w, False), total / n,
                        rtol=1e-10)

    def test_empirical_term_equals_regression(self):
        for seed in range(5):
            fit, w, _ = stratified_case(20 + seed, mode="finite_population")
            assert_allclose(
                var_stratified_closed_form(fit, w, False, "empirical"),
                var_residual_regression(fit, w), rtol=1e-8)

    def test_bad_phase_one_term(self):
        fit, w, _ = stratified_case(8)
        with pytest.raises(ValueError):
            var_stratified_closed_form(fit, w, False, "other")


class TestReport:
    def test_estimated_modes(self):
        fit, w, _ = stratified_case(9)
        rep = variance_report(fit, w)
        assert rep.primary == "fp_or_estimated"
        for key in ("model_based", "bernoulli_known", "fp_or_estimated",
                    "stratified_second_moment", "stratified_variance",
                    "estimated_plugin"):
            assert key in rep
            assert_allclose(rep[key], rep[key].T)
            assert psd(rep[key])
        assert psd(rep["stratified_second_moment"]
                   - rep["stratified_variance"])
        out = rep.to_dict(fit.beta_hat)
        assert set(out["estimators"]) == set(rep.covariances)
        assert_allclose(out["estimators"]["model_based"]["se"],
                        rep.standard_errors("model_based"))

    def test_known_mode(self, rng):
        T, D, Z, _ = random_cohort(rng, 40, 2, weights="ones")
        fit, w = known_case(T, D, Z, rng.random(40) < 0.7, 0.7)
        rep = variance_report(fit, w)
        assert rep.primary == "bernoulli_known"
        assert set(rep.covariances) == {"model_based", "bernoulli_known",
                                        "bernoulli_empirical"}

    def test_plugin_matches_stratified_model_term(self):
        fit, w, _ = stratified_case(12)
        assert_allclose(var_estimated_plugin(fit, w),
                        var_stratified_closed_form(fit, w, False), rtol=1e-10)

    def test_permutation_invariance(self):
        fit, w, (T, D, Z) = stratified_case(13)
        perm = np.random.default_rng(0).permutation(len(T))
        w2 = compute_weights(None, SamplingDesign("estimated_stratified"),
                             strata=w.strata[perm], sampled=w.sampled[perm])
        fit2 = fit_wl_cox(CohortData(T[perm], D[perm], Z[perm], w2.weights))
        a, b = variance_report(fit, w), variance_report(fit2, w2)
        for key in a.covariances:
            assert_allclose(a[key], b[key], rtol=1e-9)
