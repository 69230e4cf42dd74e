import numpy as np
import pytest

from mtptraj import (ConfigurationError, PolicyError, additive_shift, apply,
                     apply_to_data, custom, identity, is_identity,
                     parse_policy, threshold)
from conftest import random_dataset


class TestApply:
    def test_unbounded_shift(self):
        assert apply(additive_shift(1.0), 5.0) == 4.0

    def test_bounded_shift_skips_when_crossing(self):
        pol = additive_shift(2.0, bound=3.0)
        assert apply(pol, 4.0) == 4.0       # 4 - 2 < 3: unshifted
        assert apply(pol, 6.0) == 4.0       # 6 - 2 >= 3: shifted

    def test_identity_bit_for_bit(self):
        assert apply(identity(), 7.25) == 7.25

    def test_threshold(self):
        pol = threshold(5.0)
        assert apply(pol, 3.0) == 5.0
        assert apply(pol, 6.5) == 6.5

    def test_custom_non_finite_rejected(self):
        pol = custom(lambda a, h, t: float("nan"))
        with pytest.raises(PolicyError):
            apply(pol, 1.0)

    def test_column_bound_needs_value(self):
        pol = additive_shift(1.0, bound=("L", 1))
        with pytest.raises(ConfigurationError):
            apply(pol, 5.0)
        assert apply(pol, 5.0, bound=0.0) == 4.0

    def test_deterministic(self):
        pol = additive_shift(0.5, bound=lambda a, h, t: 1.0)
        assert apply(pol, 3.0) == apply(pol, 3.0) == 2.5


class TestIsIdentity:
    def test_identity_true(self):
        assert is_identity(identity())

    def test_zero_shift_is_not_identity(self):
        assert not is_identity(additive_shift(0.0))

    def test_threshold_is_not_identity(self):
        assert not is_identity(threshold(float("-inf")))


class TestApplyToData:
    def test_matches_scalar_apply(self, rng):
        data = random_dataset(rng, 20, 2)
        pol = additive_shift(0.7)
        vec = apply_to_data(pol, data, 2)
        for i in range(5):
            assert vec[i] == apply(pol, data.exposures[i, 1])

    def test_column_bound_source(self, rng):
        data = random_dataset(rng, 50, 2)
        pol = additive_shift(1.0, bound=("L", 1))
        vec = apply_to_data(pol, data, 1)
        shifted = data.exposures[:, 0] - 1.0
        bound = data.covariates[0][:, 0]
        assert np.array_equal(vec, np.where(shifted >= bound, shifted,
                                            data.exposures[:, 0]))

    def test_missing_bound_column(self, rng):
        data = random_dataset(rng, 10, 2)
        with pytest.raises(ConfigurationError, match="L1_3"):
            apply_to_data(additive_shift(1.0, bound=("L", 3)), data, 1)

    def test_piecewise_invertible_in_a(self):
        # for fixed history the bounded shift has two strictly increasing
        # linear pieces, hence is invertible on each piece
        pol = additive_shift(2.0, bound=3.0)
        grid = np.linspace(0.0, 10.0, 201)
        values = np.array([apply(pol, float(a)) for a in grid])
        shifted = grid >= 5.0
        assert np.all(np.diff(values[shifted]) > 0)
        assert np.all(np.diff(values[~shifted]) > 0)


class TestParsePolicy:
    def test_identity(self):
        assert is_identity(parse_policy("identity"))

    def test_shift_down_one(self):
        pol = parse_policy("shift:-1")
        assert pol.variant == "shift" and apply(pol, 5.0) == 4.0

    def test_shift_up(self):
        assert apply(parse_policy("shift:2"), 5.0) == 7.0

    def test_shift_with_constant_bound(self):
        pol = parse_policy("shift:-2,bound=3")
        assert apply(pol, 4.0) == 4.0

    def test_shift_with_column_bound(self):
        pol = parse_policy("shift:-1,bound=L{t}_2")
        assert pol.bound == ("L", 2)

    def test_threshold(self):
        assert apply(parse_policy("threshold:5"), 3.0) == 5.0

    def test_errors(self):
        for spec in ("shift:abc", "bogus", "shift:1,weird=2", "threshold:x"):
            with pytest.raises(ConfigurationError):
                parse_policy(spec)
