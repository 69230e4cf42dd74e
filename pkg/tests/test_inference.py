import math

import numpy as np
import pytest

from mtptraj import (ContrastResult, DegenerateContrastError, InputError,
                     MvnConfig, SingularCorrelationError, StackedEstimate,
                     build_contrast, contrast_estimate, empirical_covariance,
                     estimate_pair, full_report, identity, local_tests,
                     max_test, mvn_rect_prob, normal_cdf, normal_quantile,
                     simultaneous_ci, wald_test)
from conftest import random_correlation, random_dataset

LIGHT = MvnConfig(n_points=2 ** 12, n_shifts=8, target_se=5e-4)


def identity_stack(rng, n=80, tau=3):
    data = random_dataset(rng, n, tau)
    return data, estimate_pair(data, identity("d'"), identity("d''"))


def result_from(t_star, r_star, d_star=None):
    k = len(t_star)
    t_star = np.asarray(t_star, dtype=float)
    d_star = np.ones(k) if d_star is None else np.asarray(d_star, dtype=float)
    s_star = r_star * np.sqrt(np.outer(d_star, d_star))
    return ContrastResult(nu_hat=t_star * np.sqrt(d_star), s_star=s_star,
                          d_star=d_star, r_star=np.asarray(r_star, dtype=float),
                          t_star=t_star, h=np.zeros(k), contrast_kind="custom")


class TestBuildContrast:
    def test_baseline_tau2(self):
        k = build_contrast("baseline", 2)
        assert np.array_equal(k.matrix, [[1.0, -1.0, -1.0, 1.0]])

    def test_adjacent_tau3(self):
        k = build_contrast("adjacent", 3)
        assert np.array_equal(k.matrix, [[1, -1, 0, -1, 1, 0],
                                         [0, 1, -1, 0, -1, 1]])

    def test_baseline_is_cumsum_of_adjacent(self):
        # oracle: direct matrix multiply with the banded transform
        for tau in (2, 3, 5, 7):
            k_base = build_contrast("baseline", tau).matrix
            k_adj = build_contrast("adjacent", tau).matrix
            a = np.tril(np.ones((tau - 1, tau - 1)))
            assert np.allclose(a @ k_adj, k_base)

    def test_custom_validation(self):
        with pytest.raises(InputError, match="columns"):
            build_contrast("custom", 3, np.ones((1, 4)))
        with pytest.raises(InputError, match="zero row"):
            build_contrast("custom", 2, np.zeros((1, 4)))
        with pytest.raises(InputError):
            build_contrast("baseline", 1)
        with pytest.raises(InputError):
            build_contrast("sideways", 3)


class TestEmpiricalCovariance:
    def test_constant_columns_zero(self, rng):
        data, stacked = identity_stack(rng)
        flat = StackedEstimate(label_prime="a", label_dprime="b",
                               theta_hat=np.ones(4),
                               eif=np.ones((30, 4)))
        assert np.array_equal(empirical_covariance(flat).s_n, np.zeros((4, 4)))

    def test_identity_policy_matches_outcome_covariance(self, rng):
        data, stacked = identity_stack(rng)
        s_n = empirical_covariance(stacked).s_n
        tau = data.tau
        direct = np.cov(data.outcomes, rowvar=False, ddof=1) / data.n
        assert np.allclose(s_n[:tau, :tau], direct, atol=1e-14)
        assert np.allclose(s_n[tau:, tau:], direct, atol=1e-14)

    def test_duplicate_columns_correlation_one(self, rng):
        data, stacked = identity_stack(rng, tau=2)
        result = contrast_estimate(stacked, build_contrast(
            "custom", 2, np.array([[1.0, 0, 0, 0], [0, 0, 1.0, 0]])))
        assert abs(result.r_star[0, 1] - 1.0) <= 1e-12


class TestContrastEstimate:
    def test_single_selector_matches_sample_moments(self, rng):
        data, stacked = identity_stack(rng, tau=2)
        k = build_contrast("custom", 2, np.array([[1.0, 0.0, 0.0, 0.0]]))
        result = contrast_estimate(stacked, k)
        y1 = data.outcomes[:, 0]
        assert abs(result.nu_hat[0] - y1.mean()) <= 1e-12
        assert abs(result.s_star[0, 0] - np.var(y1, ddof=1) / data.n) <= 1e-15

    def test_h_equal_estimate_zeroes_t(self, rng):
        _, stacked = identity_stack(rng)
        k = build_contrast("baseline", 3)
        result = contrast_estimate(stacked, k, h=k.matrix @ stacked.theta_hat)
        assert np.array_equal(result.t_star, np.zeros(2))

    def test_row_scaling_invariance(self, rng):
        _, stacked = identity_stack(rng)
        base = build_contrast("baseline", 3).matrix
        scaled = base.copy()
        scaled[0] *= 7.5
        r1 = contrast_estimate(stacked, build_contrast("custom", 3, base))
        r2 = contrast_estimate(stacked, build_contrast("custom", 3, scaled))
        assert np.allclose(r1.t_star, r2.t_star, atol=1e-12)
        assert np.allclose(r1.r_star, r2.r_star, atol=1e-12)

    def test_degenerate_contrast_error(self, rng):
        _, stacked = identity_stack(rng, tau=2)
        k = build_contrast("custom", 2, np.array([[1.0, 0, -1.0, 0]]))
        with pytest.raises(DegenerateContrastError, match="row 1"):
            contrast_estimate(stacked, k)  # identical blocks: zero variance

    def test_r_star_well_formed(self, rng):
        _, stacked = identity_stack(rng)
        result = contrast_estimate(stacked, build_contrast("adjacent", 3))
        assert np.allclose(np.diag(result.r_star), 1.0, atol=1e-10)
        assert np.all(np.abs(result.r_star) <= 1.0 + 1e-12)


class TestWald:
    def test_k1_squared_z(self):
        res = result_from([1.959964], np.eye(1))
        out = wald_test(res)
        assert abs(out.statistic - 3.8415) <= 1e-3
        assert abs(out.p - 0.05) <= 1e-4
        assert out.df == 1

    def test_zero_statistic(self):
        out = wald_test(result_from([0.0, 0.0], np.eye(2)))
        assert out.statistic == 0.0 and out.p == 1.0

    def test_identity_correlation_sum_of_squares(self):
        out = wald_test(result_from([0.7, -1.2], np.eye(2)))
        assert abs(out.statistic - (0.49 + 1.44)) <= 1e-12

    def test_reduces_to_squared_z_at_k1(self):
        for t in (0.3, 1.7, -2.4):
            out = wald_test(result_from([t], np.eye(1)))
            assert abs(out.statistic - t * t) <= 1e-12

    def test_singularity_error(self):
        rho = 1.0 - 5e-14
        r = np.array([[1.0, rho], [rho, 1.0]])
        with pytest.raises(SingularCorrelationError, match="smaller"):
            wald_test(result_from([1.0, 1.0], r))


class TestMaxTest:
    def test_k1_two_sided_normal(self):
        out = max_test(result_from([1.959964], np.eye(1)), 0.05, LIGHT)
        assert abs(out.p - 0.05) <= 1e-4
        assert abs(out.q_alpha - normal_quantile(0.975)) <= 1e-4

    def test_independence_factorization(self):
        out = max_test(result_from([2.0, 0.3, -1.1], np.eye(3)), 0.05, MvnConfig())
        expect = 1.0 - (2.0 * normal_cdf(2.0) - 1.0) ** 3
        assert abs(out.p - expect) <= 2e-4

    def test_equicorrelated_vs_frozen_mc(self):
        # frozen oracle: 1e7-draw plain MC at k=4, rho=0.5, t=2.2 gave
        # g = 0.908838 (se 9.1e-5)
        r = np.full((4, 4), 0.5)
        np.fill_diagonal(r, 1.0)
        out = max_test(result_from([2.2, 0.0, 0.0, 0.0], r), 0.05, MvnConfig())
        assert abs(out.p - (1.0 - 0.908838)) <= 3.0 * math.hypot(9.1e-5, out.mc_error)

    def test_statistic_is_max_abs(self):
        out = max_test(result_from([-2.5, 1.0], np.eye(2)), 0.05, LIGHT)
        assert out.statistic == 2.5

    def test_precision_warning_attached(self):
        r = random_correlation(np.random.default_rng(3), 5)
        tiny = MvnConfig(n_points=2 ** 8, n_shifts=3, target_se=1e-9)
        out = max_test(result_from([1.0, 0.5, -0.2, 0.1, 0.9], r), 0.05, tiny)
        assert out.precision_warning is not None


class TestLocalTests:
    def test_k1_all_methods_coincide(self):
        out = local_tests(result_from([1.3], np.eye(1)), 0.05, LIGHT)[0]
        assert out.p_unadjusted == out.p_bonferroni == out.p_max
        assert out.ci_pointwise == out.ci_bonferroni
        assert np.allclose(out.ci_max, out.ci_pointwise, atol=1e-4)

    def test_independent_max_adjustment(self):
        outs = local_tests(result_from([1.8, 0.4, -2.2], np.eye(3)), 0.05,
                           MvnConfig())
        for lt in outs:
            expect = 1.0 - (2.0 * normal_cdf(abs(lt.t)) - 1.0) ** 3
            assert abs(lt.p_max - expect) <= 2e-4

    def test_p_value_ordering_random_matrices(self, rng):
        for _ in range(100):
            k = int(rng.integers(2, 6))
            r = random_correlation(rng, k)
            t = rng.uniform(-3, 3, size=k)
            outs = local_tests(result_from(t, r), 0.05, LIGHT)
            for lt in outs:
                g, se = mvn_rect_prob(abs(lt.t), r, LIGHT)
                assert lt.p_unadjusted <= lt.p_max
                assert lt.p_max <= lt.p_bonferroni + 3.0 * se + 1e-12

    def test_bonferroni_cap(self):
        outs = local_tests(result_from([0.1, 0.2, 0.1], np.eye(3)), 0.05, LIGHT)
        assert all(lt.p_bonferroni <= 1.0 for lt in outs)


class TestSimultaneousCi:
    def test_k1_rules_coincide(self):
        res = result_from([1.0], np.eye(1), d_star=[4.0])
        point = simultaneous_ci(res, 0.05, "pointwise")
        bonf = simultaneous_ci(res, 0.05, "bonferroni")
        mx = simultaneous_ci(res, 0.05, "max", LIGHT)
        assert point == bonf
        assert np.allclose(mx, point, atol=1e-3)

    def test_halfwidth_ordering(self, rng):
        for _ in range(20):
            k = int(rng.integers(2, 7))
            r = random_correlation(rng, k)
            res = result_from(rng.uniform(-2, 2, k), r)
            point = simultaneous_ci(res, 0.05, "pointwise")
            bonf = simultaneous_ci(res, 0.05, "bonferroni")
            mx = simultaneous_ci(res, 0.05, "max", LIGHT)
            for j in range(k):
                w_point = point[j][1] - point[j][0]
                w_max = mx[j][1] - mx[j][0]
                w_bonf = bonf[j][1] - bonf[j][0]
                assert w_point <= w_max + 1e-12
                assert w_max <= w_bonf + 1e-12

    def test_quantile_monotone_in_alpha(self, rng):
        r = random_correlation(rng, 4)
        res = result_from([0.5, 0.1, -0.3, 0.2], r)
        widths = []
        for alpha in (0.10, 0.05, 0.01):
            ci = simultaneous_ci(res, alpha, "max", LIGHT)[0]
            widths.append(ci[1] - ci[0])
        assert widths[0] <= widths[1] <= widths[2]

    def test_unknown_rule(self):
        with pytest.raises(InputError):
            simultaneous_ci(result_from([1.0], np.eye(1)), 0.05, "tukey")


class TestFullReport:
    def test_schema_keys(self, rng):
        _, stacked = identity_stack(rng)
        report = full_report(stacked, build_contrast("baseline", 3),
                             mvn_config=LIGHT)
        payload = report.to_dict()
        assert set(payload) == {"contrast_kind", "alpha", "wald", "max", "locals"}
        assert set(payload["wald"]) == {"stat", "df", "p"}
        assert set(payload["max"]) == {"stat", "p", "q", "mc_error"}
        for item in payload["locals"]:
            assert set(item) == {"j", "estimate", "se", "t", "p_unadj", "p_bonf",
                                 "p_max", "ci_pointwise", "ci_bonf", "ci_max"}

    def test_global_local_coherence(self, rng):
        # max family: global rejection iff some local max rejection
        hits = 0
        for seed in range(40):
            r = np.random.default_rng(seed)
            data = random_dataset(r, 60, 3)
            from mtptraj import additive_shift
            stacked = estimate_pair(data, identity(), additive_shift(0.5),
                                    config=None)
            report = full_report(stacked, build_contrast("baseline", 3),
                                 mvn_config=LIGHT)
            local_any = any(lt.reject_max for lt in report.locals)
            assert report.max.reject == local_any
            hits += report.max.reject
        assert 0 < hits  # some rejections occurred, so both branches ran
