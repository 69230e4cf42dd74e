import numpy as np
import pytest

from mtptraj import (LogisticLearner, OlsLearner, SdrConfig, additive_shift,
                     apply_to_data, assemble_eif, estimate_pair, estimate_ratio,
                     estimate_trajectory, fold_assignment, history_features,
                     identity, sequential_regression)
from mtptraj.learners import make_classification_learner
from conftest import random_dataset

FAST = SdrConfig(m_learner=OlsLearner(), ratio_learner=LogisticLearner(),
                 folds=2, seed=11)


class _CorruptedRegression:
    """Deliberately wrong regression learner (bounded garbage)."""

    def fit(self, x, y):
        return self

    def predict(self, x):
        return 100.0 * np.sin(x[:, 0]) + 37.0


def gaussian_panel(rng, n, tau=2):
    """Panel where A_t | H_t is Gaussian with known linear mean."""
    covariates = []
    exposures = np.empty((n, tau))
    outcomes = np.empty((n, tau))
    prev_y = np.zeros(n)
    for t in range(tau):
        block = rng.standard_normal((n, 1))
        covariates.append(block)
        exposures[:, t] = 1.0 + 0.8 * block[:, 0] + rng.standard_normal(n)
        outcomes[:, t] = (2.0 + block[:, 0] + 0.5 * exposures[:, t]
                          + 0.2 * prev_y + rng.standard_normal(n))
        prev_y = outcomes[:, t]
    from mtptraj import LongitudinalDataset
    return LongitudinalDataset(covariates=tuple(covariates), exposures=exposures,
                               outcomes=outcomes,
                               assessment_times=np.arange(1.0, tau + 1))


class TestEstimateRatio:
    def test_identity_groups_give_unit_ratio(self, rng):
        data = gaussian_panel(rng, 2000, tau=1)
        folds = fold_assignment(data.n, 2, 0)
        r = estimate_ratio(data, identity(), 1, LogisticLearner(), folds)
        assert np.max(np.abs(r - 1.0)) <= 0.05

    def test_zero_delta_shift_gives_unit_ratio(self, rng):
        data = gaussian_panel(rng, 2000, tau=1)
        folds = fold_assignment(data.n, 2, 0)
        r = estimate_ratio(data, additive_shift(0.0), 1, LogisticLearner(), folds)
        assert np.max(np.abs(r - 1.0)) <= 0.05

    def test_matches_closed_form_gaussian_ratio(self, rng):
        # oracle: A | L ~ N(1 + 0.8 L, 1); lowering by one gives
        # r(a, l) = g(a + 1 | l) / g(a | l) = exp(-(a - mu(l)) - 1/2)
        data = gaussian_panel(rng, 5000, tau=1)
        folds = fold_assignment(data.n, 5, 0)
        r_hat = estimate_ratio(data, additive_shift(1.0), 1, LogisticLearner(), folds)
        mu = 1.0 + 0.8 * data.covariates[0][:, 0]
        r_true = np.exp(-(data.exposures[:, 0] - mu) - 0.5)
        rel = np.abs(r_hat - r_true) / r_true
        assert np.median(rel) <= 0.15

    def test_clipping_engaged_under_separation(self, rng):
        data = gaussian_panel(rng, 500, tau=1)
        folds = fold_assignment(data.n, 2, 0)
        # huge shift: the classifier separates the two groups
        r = estimate_ratio(data, additive_shift(50.0), 1, LogisticLearner(),
                           folds, ratio_p_min=1e-2)
        lo, hi = 1e-2 / (1 - 1e-2), (1 - 1e-2) / 1e-2
        assert np.all((r >= lo) & (r <= hi))
        assert np.any(r == lo) or np.any(r == hi)


class TestTelescoping:
    def test_identity_exact_with_corrupted_learners(self, rng):
        data = random_dataset(rng, 60, 3)
        corrupt = SdrConfig(m_learner=_CorruptedRegression(),
                            ratio_learner=LogisticLearner(), folds=1, seed=0)
        for t in (1, 2, 3):
            col, _ = sequential_regression(data, identity(), t, corrupt)
            assert np.array_equal(col.values, data.outcomes[:, t - 1])

    def test_shortcut_agrees_with_general_path(self, rng):
        data = random_dataset(rng, 40, 2)
        est = estimate_trajectory(data, identity(), FAST)
        for t in (1, 2):
            col, _ = sequential_regression(data, identity(), t, FAST)
            assert np.array_equal(col.values, est.eif[:, t - 1])


class TestOneStepEquivalence:
    def test_aipw_oracle(self, rng):
        # independent direct AIPW assembly from the raw nuisance pieces
        for rep in range(10):
            r = np.random.default_rng(rep)
            data = gaussian_panel(r, 200, tau=1)
            col, bundle = sequential_regression(data, additive_shift(1.0), 1, FAST)
            aipw = (bundle.ratios[:, 0] * (data.outcomes[:, 0] - bundle.m_nat[:, 0])
                    + bundle.m_int[:, 0])
            assert np.max(np.abs(col.values - aipw)) <= 1e-10


class TestAssembly:
    def test_cumprod_display_matches_recursion(self, rng):
        data = random_dataset(rng, 80, 3)
        col, bundle = sequential_regression(data, additive_shift(0.5), 3, FAST)
        display = assemble_eif(bundle, data.outcomes[:, 2])
        assert np.max(np.abs(display - col.values)) <= 1e-12 * max(
            1.0, np.max(np.abs(col.values)))

    def test_cumprod_matches_scratch_products(self, rng):
        data = random_dataset(rng, 50, 3)
        _, bundle = sequential_regression(data, additive_shift(0.5), 3, FAST)
        cumr = np.cumprod(bundle.ratios, axis=1)
        for p in range(3):
            scratch = np.ones(data.n)
            for k in range(p + 1):
                scratch = scratch * bundle.ratios[:, k]
            assert np.max(np.abs(cumr[:, p] - scratch)) <= 1e-12 * np.max(scratch)

    def test_non_finite_flagged_with_location(self, rng):
        data = random_dataset(rng, 30, 2)

        class Explodes:
            def fit(self, x, y):
                return self

            def predict(self, x):
                return np.full(x.shape[0], np.inf)

        bad = SdrConfig(m_learner=Explodes(), ratio_learner=LogisticLearner(),
                        folds=1, seed=0)
        from mtptraj import EstimationError
        with pytest.raises(EstimationError, match=r"s=2, t=2"):
            sequential_regression(data, additive_shift(1.0), 2, bad)


class TestTrajectory:
    def test_identity_theta_is_outcome_means(self, rng):
        data = random_dataset(rng, 100, 4)
        est = estimate_trajectory(data, identity(), FAST)
        assert np.max(np.abs(est.theta_hat - data.outcomes.mean(axis=0))) <= 1e-12
        assert np.array_equal(est.eif, data.outcomes)

    def test_tau_one_consistent_with_aipw(self, rng):
        data = gaussian_panel(rng, 150, tau=1)
        pol = additive_shift(1.0)
        est = estimate_trajectory(data, pol, FAST)
        col, bundle = sequential_regression(data, pol, 1, FAST)
        assert np.allclose(est.eif[:, 0], col.values)
        assert est.theta_hat.shape == (1,)

    def test_determinism(self, rng):
        data = random_dataset(rng, 120, 2)
        pol = additive_shift(0.5)
        a = estimate_trajectory(data, pol, FAST)
        b = estimate_trajectory(data, pol, FAST)
        assert np.array_equal(a.theta_hat, b.theta_hat)
        assert np.array_equal(a.eif, b.eif)

    def test_eif_means_reproduce_theta(self, rng):
        data = random_dataset(rng, 90, 3)
        est = estimate_trajectory(data, additive_shift(0.25), FAST)
        assert np.max(np.abs(est.eif.mean(axis=0) - est.theta_hat)) <= 1e-12 * max(
            1.0, np.max(np.abs(est.theta_hat)))


class TestPair:
    def test_identity_identity_blocks_equal(self, rng):
        data = random_dataset(rng, 70, 3)
        stacked = estimate_pair(data, identity("d'"), identity("d''"), FAST)
        assert np.array_equal(stacked.theta_hat[:3], stacked.theta_hat[3:])
        assert np.array_equal(stacked.eif[:, :3], stacked.eif[:, 3:])

    def test_identity_block_is_exact(self, rng):
        data = random_dataset(rng, 70, 2)
        stacked = estimate_pair(data, identity(), additive_shift(1.0), FAST)
        assert np.array_equal(stacked.theta_hat[:2], data.outcomes.mean(axis=0))

    def test_stacked_order_and_labels(self, rng):
        data = random_dataset(rng, 50, 2)
        stacked = estimate_pair(data, identity(), additive_shift(1.0), FAST)
        prime = estimate_trajectory(data, identity(), FAST)
        assert np.array_equal(stacked.trajectory("prime"), prime.theta_hat)
        assert stacked.label_prime == "identity"
        assert stacked.label_dprime.startswith("shift")
