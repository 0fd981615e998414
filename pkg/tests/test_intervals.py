import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from predint import (
    BootstrapConfig,
    ConvergenceWarning,
    DomainError,
    MonteCarloWarning,
    NumericalError,
    StudySet,
    ci_wald,
    confidence_interval,
    interval,
    percentile,
    pi_hts,
    pi_nnf,
    pi_pr,
    t_quantile,
)
from predint.heterogeneity import q_statistic
from predint.intervals import B_DEFAULT, CI_VARIANTS, PR_VARIANTS, bootstrap_samples

from oracles import SBP, t_quantile_mp
from strategies import random_study_set, study_sets

FAST = dict(b=2000, seed=7)


def quiet(fn, *args, **kwargs):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        return fn(*args, **kwargs)


def random_sets(n, seed=0):
    rng = np.random.default_rng(seed)
    return [random_study_set(rng, int(rng.integers(3, 15)), float(rng.choice([0.0, 0.05, 0.5]))) for _ in range(n)]


class TestTQuantile:
    @pytest.mark.parametrize("p", [0.5, 0.6, 0.9, 0.975, 0.995, 0.025, 1e-4])
    @pytest.mark.parametrize("df", [1, 2, 3.5, 5.951, 8, 30, 1000])
    def test_incomplete_beta_oracle(self, p, df):
        assert t_quantile(p, df) == pytest.approx(t_quantile_mp(p, df), rel=1e-10, abs=1e-12)

    def test_table_values(self):
        assert t_quantile(0.975, 1e7) == pytest.approx(1.959964, abs=1e-5)
        assert t_quantile(0.975, 8) == pytest.approx(2.306004, abs=1e-5)
        assert t_quantile(0.5, 4.2) == 0.0
        assert t_quantile(0.975, math.inf) == pytest.approx(1.959963984540054, rel=1e-15)

    @given(st.floats(0.001, 0.999), st.floats(0.5, 200))
    def test_symmetry(self, p, df):
        assert t_quantile(1 - p, df) == pytest.approx(-t_quantile(p, df), rel=1e-9, abs=1e-12)

    @pytest.mark.parametrize("p, df", [(0.0, 3), (1.0, 3), (0.5, 0.0), (0.5, -1.0), (1.5, 3)])
    def test_domain(self, p, df):
        with pytest.raises(DomainError):
            t_quantile(p, df)


class TestPercentile:
    def test_uniform_grid(self):
        assert percentile(np.arange(1, 101), 0.5) == 50.5

    @pytest.mark.parametrize("p", [0.0, 0.01, 0.3, 1.0])
    def test_singleton(self, p):
        assert percentile([4.2], p) == 4.2

    @given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=40), st.floats(0, 1))
    def test_type7_definition(self, xs, p):
        x = sorted(xs)
        h = (len(x) - 1) * p
        lo = math.floor(h)
        hi = min(lo + 1, len(x) - 1)
        expected = x[lo] + (h - lo) * (x[hi] - x[lo])
        assert percentile(xs, p) == pytest.approx(expected, rel=1e-12, abs=1e-9)

    def test_normal_sample(self):
        z = np.random.default_rng(3).standard_normal(1_000_000)
        assert percentile(z, 0.975) == pytest.approx(1.96, abs=0.01)

    def test_empty(self):
        with pytest.raises(DomainError):
            percentile([], 0.5)


class TestHTS:
    def test_sbp_oracle(self, sbp):
        r = pi_hts(sbp)
        t8, t9 = t_quantile_mp(0.975, 8), t_quantile_mp(0.975, 9)
        half_pi = t8 * math.sqrt(SBP["tau2_dl"] + SBP["var_apx_dl"])
        half_ci = t9 * math.sqrt(SBP["var_apx_dl"])
        assert r.muhat == pytest.approx(SBP["mu_dl"], abs=1e-14)
        # scipy's t quantile is accurate to a few 1e-11 relative
        assert (r.lpi, r.upi) == pytest.approx((SBP["mu_dl"] - half_pi, SBP["mu_dl"] + half_pi), abs=1e-10)
        assert (r.lci, r.uci) == pytest.approx((SBP["mu_dl"] - half_ci, SBP["mu_dl"] + half_ci), abs=1e-10)
        assert (r.nup, r.nuc) == (8, 9)
        assert r.tau2h == pytest.approx(SBP["tau2_dl"], rel=1e-12)
        assert r.i2h == pytest.approx(SBP["i2_dl"], rel=1e-12)
        assert (round(r.lpi, 4), round(r.upi, 4)) == (-0.7598, 0.0917)

    def test_homogeneous_collapse(self):
        s = StudySet([0.1, 0.12, 0.09, 0.11, 0.1], [0.5] * 5)
        r = pi_hts(s)
        assert r.tau2h == 0.0
        half = t_quantile_mp(0.975, 3) * math.sqrt(0.25 / 5)
        assert r.upi - r.muhat == pytest.approx(half, rel=1e-10)

    def test_requires_three_studies(self):
        with pytest.raises(DomainError, match="requires K >= 3"):
            pi_hts(StudySet([0.0, 1.0], [1.0, 1.0]))

    def test_alpha_checked(self, sbp):
        with pytest.raises(DomainError):
            pi_hts(sbp, alpha=1.2)


class TestPartlettRiley:
    @pytest.mark.parametrize("variant", PR_VARIANTS)
    def test_sbp_oracle(self, sbp, variant):
        r = pi_pr(sbp, variant)
        var = SBP[f"var_{variant.lower()}_reml" if variant != "APX" else "var_apx_reml"]
        nup = SBP["kr_df_reml"] - 1 if variant == "KR" else 8
        half = t_quantile_mp(0.975, nup) * math.sqrt(SBP["tau2_reml"] + var)
        assert r.muhat == pytest.approx(SBP["mu_reml"], abs=1e-9)
        assert r.upi - r.muhat == pytest.approx(half, rel=1e-7)
        assert r.muhat - r.lpi == pytest.approx(r.upi - r.muhat, rel=1e-12)
        assert r.nup == pytest.approx(nup, rel=1e-7)
        assert r.tau2_method == "REML" and r.var_method == variant and r.converged
        assert r.i2h == pytest.approx(SBP["i2_reml"], rel=1e-8)

    def test_sbp_hk_values(self, sbp):
        r = pi_pr(sbp, "HK")
        assert (r.lpi, r.upi) == pytest.approx((-0.98873, 0.33125), abs=1e-5)

    def test_degenerate_hk(self):
        r = pi_pr(StudySet([0.4] * 5, [0.3] * 5), "HK")
        assert r.lpi == pytest.approx(0.4, abs=1e-12) and r.upi == pytest.approx(0.4, abs=1e-12)

    def test_kr_equals_apx_for_equal_sigma(self):
        s = StudySet([0.1, 0.9, -0.3, 0.4, 1.5, 0.2], [0.35] * 6)
        kr, apx = pi_pr(s, "KR"), pi_pr(s, "APX")
        assert kr.muhat == apx.muhat and kr.tau2h == apx.tau2h
        assert kr.nup == pytest.approx(s.k - 2, rel=1e-9)
        # same variance, df k-1-1 = k-2 as well, hence identical limits
        assert kr.upi == pytest.approx(apx.upi, rel=1e-9)

    def test_kr_at_least_as_wide_as_apx(self):
        count = 0
        for s in random_sets(100, seed=11):
            try:
                kr = quiet(pi_pr, s, "KR")
            except NumericalError:
                continue
            apx = quiet(pi_pr, s, "APX")
            assert kr.upi - kr.lpi >= apx.upi - apx.lpi - 1e-12
            count += 1
        assert count >= 50

    def test_kr_small_df_error(self):
        s = StudySet([0.21, -1.071, 0.723], [0.4426, 0.0706, 0.0225])
        with pytest.raises(NumericalError, match="nu"):
            pi_pr(s, "KR")

    @pytest.mark.parametrize("c", [1.0, 0.0546875, 3.0, 1e3])
    def test_kr_boundary_df_independent_of_scale(self, c):
        # equal weights with K = 3 give nu = 2 exactly
        s = StudySet([0.0, 0.0, 1.375], [0.5] * 3).scaled(c)
        with pytest.raises(NumericalError, match="nu"):
            pi_pr(s, "KR")

    def test_unknown_variant(self, sbp):
        with pytest.raises(DomainError):
            pi_pr(sbp, "XX")

    def test_reml_warning_propagates(self, sbp):
        with pytest.warns(ConvergenceWarning):
            r = pi_pr(sbp, "HK", maxiter=1)
        assert not r.converged


class TestWaldCI:
    def test_dl_sbp(self, sbp):
        r = ci_wald(sbp, "DL")
        half = t_quantile_mp(0.975, 9) * math.sqrt(SBP["var_apx_dl"])
        assert r.uci - r.muhat == pytest.approx(half, rel=1e-10)
        assert r.lpi is None and r.nuc == 9
        assert (round(r.lci, 4), round(r.uci, 4)) == (-0.5068, -0.1613)

    @pytest.mark.parametrize("variant", ["APX", "HK", "SJ"])
    def test_reml_variants_df(self, sbp, variant):
        r = ci_wald(sbp, variant)
        var = SBP[f"var_{variant.lower()}_reml"]
        half = t_quantile_mp(0.975, 9) * math.sqrt(var)
        assert r.uci - r.muhat == pytest.approx(half, rel=1e-7)

    def test_kr_uses_nu(self, sbp):
        r = ci_wald(sbp, "KR")
        assert r.nuc == pytest.approx(SBP["kr_df_reml"], rel=1e-7)
        half = t_quantile_mp(0.975, SBP["kr_df_reml"]) * math.sqrt(SBP["var_kr_reml"])
        assert r.uci - r.muhat == pytest.approx(half, rel=1e-7)

    def test_constant_effects_hk(self):
        r = ci_wald(StudySet([1.0] * 4, [0.2, 0.3, 0.4, 0.5]), "HK")
        assert r.uci - r.lci == pytest.approx(0.0, abs=1e-12)

    def test_unknown(self, sbp):
        with pytest.raises(DomainError):
            ci_wald(sbp, "PL")

    def test_ci_inside_pi(self):
        for s in random_sets(100, seed=3):
            pairs = [(pi_hts(s), ci_wald(s, "DL"))]
            for v in PR_VARIANTS:
                try:
                    pairs.append((quiet(pi_pr, s, v), quiet(ci_wald, s, v)))
                except NumericalError:
                    pass
            for pi, ci in pairs:
                assert pi.lpi <= ci.lci + 1e-12 and ci.uci <= pi.upi + 1e-12
                assert pi.lci == pytest.approx(ci.lci) and pi.uci == pytest.approx(ci.uci)


class TestInvariants:
    @given(study_sets(max_k=10), st.sampled_from(["HTS"] + list(PR_VARIANTS)))
    def test_ordering(self, s, method):
        try:
            r = quiet(interval, s, method)
        except NumericalError:
            return
        assert r.lpi <= r.lci <= r.muhat <= r.uci <= r.upi

    @given(study_sets(max_k=10), st.floats(-30, 30), st.sampled_from(["HTS"] + list(PR_VARIANTS)))
    def test_location_equivariance(self, s, c, method):
        try:
            a = quiet(interval, s, method, maxiter=1000)
        except NumericalError:
            return
        b = quiet(interval, s.shifted(c), method, maxiter=1000)
        scale = max(1.0, abs(c), a.upi - a.lpi)
        for x, y in [(a.lpi, b.lpi), (a.upi, b.upi), (a.lci, b.lci), (a.uci, b.uci), (a.muhat, b.muhat)]:
            assert y - c == pytest.approx(x, rel=1e-10, abs=1e-10 * scale)

    @given(study_sets(max_k=10), st.floats(0.05, 20), st.sampled_from(["HTS"] + list(PR_VARIANTS)))
    def test_scale_equivariance(self, s, c, method):
        try:
            a = quiet(interval, s, method, maxiter=1000)
        except NumericalError:
            return
        b = quiet(interval, s.scaled(c), method, maxiter=1000)
        width = a.upi - a.lpi
        for x, y in [(a.lpi, b.lpi), (a.upi, b.upi), (a.lci, b.lci), (a.uci, b.uci), (a.muhat, b.muhat)]:
            assert y == pytest.approx(c * x, rel=1e-10, abs=1e-10 * c * width)

    def test_common_centre_when_homogeneous(self):
        s = StudySet([0.2, 0.25, 0.18, 0.22], [0.3] * 4)
        assert q_statistic(s).q <= s.k - 1
        fixed = float(np.mean(s.y))
        for method in ("boot", "HTS") + PR_VARIANTS:
            r = interval(s, method, cfg=BootstrapConfig(**FAST))
            assert r.muhat == pytest.approx(fixed, rel=1e-12)


class TestBootstrap:
    def test_defaults(self):
        cfg = BootstrapConfig()
        assert cfg.b == B_DEFAULT == 25000 and cfg.threads == 1

    @pytest.mark.parametrize(
        "kwargs",
        [dict(b=0), dict(b=2.5), dict(threads=0), dict(b=3, rnd=[0.0, 0.1]), dict(b=2, rnd=[0.0, -1.0]),
         dict(b=1, rnd=[np.nan])],
    )
    def test_config_validation(self, kwargs):
        with pytest.raises(DomainError):
            BootstrapConfig(**kwargs)

    def test_result_fields(self, sbp):
        r = pi_nnf(sbp, BootstrapConfig(**FAST))
        assert (r.nup, r.nuc) == (9, 9)
        assert r.muhat == pytest.approx(SBP["mu_dl"], abs=1e-14)
        assert r.tau2h == pytest.approx(SBP["tau2_dl"], rel=1e-12)
        assert r.b_used == 2000 and r.seed == 7 and r.method == "boot"
        assert r.lpi < r.lci < r.muhat < r.uci < r.upi

    def test_zero_draws_make_pi_equal_ci(self, sbp):
        r = pi_nnf(sbp, BootstrapConfig(b=3000, seed=1, rnd=np.zeros(3000)))
        assert (r.lpi, r.upi) == (r.lci, r.uci)

    def test_rnd_replaces_sampling(self, sbp):
        cfg = BootstrapConfig(b=1500, seed=5)
        theta, _, _ = bootstrap_samples(sbp, cfg)
        from predint.qform import QFormSpec, TauConfidenceDistribution, open_uniform
        from predint.intervals import block_generator

        dist = TauConfidenceDistribution(QFormSpec.from_studies(sbp), q_statistic(sbp).q)
        draws = np.concatenate([
            dist.invert(open_uniform(block_generator(5, blk), (3, n))[0])
            for blk, n in enumerate([1024, 476])
        ])
        theta2, _, _ = bootstrap_samples(sbp, BootstrapConfig(b=1500, seed=5, rnd=draws))
        np.testing.assert_array_equal(theta, theta2)

    def test_same_seed_same_result(self, sbp):
        a = pi_nnf(sbp, BootstrapConfig(**FAST))
        b = pi_nnf(sbp, BootstrapConfig(**FAST))
        assert a == b

    @pytest.mark.parametrize("threads", [2, 4])
    def test_thread_count_irrelevant(self, sbp, threads):
        a = pi_nnf(sbp, BootstrapConfig(b=5000, seed=99, threads=1))
        b = pi_nnf(sbp, BootstrapConfig(b=5000, seed=99, threads=threads))
        assert (a.lpi, a.upi, a.lci, a.uci) == (b.lpi, b.upi, b.lci, b.uci)

    def test_random_seed_reported(self, sbp):
        r = pi_nnf(sbp, BootstrapConfig(b=1000))
        again = pi_nnf(sbp, BootstrapConfig(b=1000, seed=r.seed))
        assert (r.lpi, r.upi) == (again.lpi, again.upi)

    def test_small_b_warns(self, sbp):
        with pytest.warns(MonteCarloWarning):
            pi_nnf(sbp, BootstrapConfig(b=200, seed=1))

    @pytest.mark.parametrize("c", [-3.7, 0.25, 12.0])
    def test_location_equivariance(self, sbp, c):
        a = pi_nnf(sbp, BootstrapConfig(**FAST))
        b = pi_nnf(sbp.shifted(c), BootstrapConfig(**FAST))
        for x, y in [(a.lpi, b.lpi), (a.upi, b.upi), (a.lci, b.lci), (a.uci, b.uci)]:
            assert y - c == pytest.approx(x, rel=1e-10, abs=1e-10 * max(1, abs(c)))

    @pytest.mark.parametrize("c", [0.5, 3.0, 10.0])
    def test_scale_equivariance(self, sbp, c):
        # the bracket and tolerance of the tau^2 inversion are in squared units
        a = pi_nnf(sbp, BootstrapConfig(**FAST))
        cfg = BootstrapConfig(**FAST, upper=1000.0 * c * c, tol=BootstrapConfig().tol * c * c)
        b = pi_nnf(sbp.scaled(c), cfg)
        for x, y in [(a.lpi, b.lpi), (a.upi, b.upi), (a.lci, b.lci), (a.uci, b.uci)]:
            assert y == pytest.approx(c * x, rel=1e-10)

    def test_requires_three_studies(self):
        with pytest.raises(DomainError, match="K >= 3"):
            pi_nnf(StudySet([0, 1], [1, 1]), BootstrapConfig(**FAST))

    def test_two_seeds_agree(self, sbp):
        a = pi_nnf(sbp, BootstrapConfig(b=25000, seed=1))
        b = pi_nnf(sbp, BootstrapConfig(b=25000, seed=2))
        for x, y in [(a.lpi, b.lpi), (a.upi, b.upi), (a.lci, b.lci), (a.uci, b.uci)]:
            assert abs(x - y) < 0.02


class TestDispatch:
    @pytest.mark.parametrize("method", ["boot", "HTS"] + list(PR_VARIANTS))
    def test_interval(self, sbp, method):
        r = interval(sbp, method, cfg=BootstrapConfig(**FAST))
        assert r.method == method and r.lpi is not None

    @pytest.mark.parametrize("method", ["boot"] + list(CI_VARIANTS))
    def test_confidence_interval(self, sbp, method):
        r = confidence_interval(sbp, method, cfg=BootstrapConfig(**FAST))
        assert r.lpi is None and r.upi is None and r.lci < r.uci

    def test_boot_ci_matches_pi_run(self, sbp):
        cfg = BootstrapConfig(**FAST)
        full = pi_nnf(sbp, cfg)
        ci = confidence_interval(sbp, "boot", cfg=cfg)
        assert (ci.lci, ci.uci, ci.nuc) == (full.lci, full.uci, full.nuc)

    def test_unknown(self, sbp):
        with pytest.raises(DomainError):
            interval(sbp, "PL")

    def test_to_dict_order(self, sbp):
        keys = list(pi_hts(sbp).to_dict())
        assert keys[:10] == ["K", "muhat", "lpi", "upi", "lci", "uci", "nup", "nuc", "tau2h", "i2h"]
