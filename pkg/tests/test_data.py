import numpy as np
import pytest

from mtptraj import (DataError, LongitudinalDataset, SchemaError,
                     history_feature_names, history_features, load_csv,
                     write_csv)
from conftest import random_dataset


def write(tmp_path, text, name="data.csv"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


BASIC = """L1_1,A1,Y1,L2_1,A2,Y2
0.1,1.0,2.0,0.2,1.1,2.1
0.3,1.2,2.2,0.4,1.3,2.3
0.5,1.4,2.4,0.6,1.5,2.5
"""


class TestLoadCsv:
    def test_basic_shape_inference(self, tmp_path):
        data = load_csv(write(tmp_path, BASIC))
        assert (data.n, data.tau, data.p) == (3, 2, (1, 1))
        assert np.array_equal(data.assessment_times, [1.0, 2.0])
        assert data.exposures[1, 1] == 1.3

    def test_column_order_irrelevant(self, tmp_path):
        shuffled = """Y2,A1,L2_1,Y1,L1_1,A2
2.1,1.0,0.2,2.0,0.1,1.1
2.3,1.2,0.4,2.2,0.3,1.3
2.5,1.4,0.6,2.4,0.5,1.5
"""
        a = load_csv(write(tmp_path, BASIC, "a.csv"))
        b = load_csv(write(tmp_path, shuffled, "b.csv"))
        assert a.equals(b)

    def test_blank_cell_is_error_with_row(self, tmp_path):
        bad = BASIC.replace("0.4,1.3,2.3", "0.4,1.3,")
        with pytest.raises(DataError, match=r"Y2.*row 1"):
            load_csv(write(tmp_path, bad))

    def test_non_numeric_cell(self, tmp_path):
        with pytest.raises(DataError, match="A2"):
            load_csv(write(tmp_path, BASIC.replace("1.5,2.5", "oops,2.5")))

    def test_missing_column_named(self, tmp_path):
        text = BASIC.replace("A2,", "A3,")
        with pytest.raises(SchemaError, match="A2"):
            load_csv(write(tmp_path, text))

    def test_unknown_column_rejected(self, tmp_path):
        with pytest.raises(SchemaError, match="weird"):
            load_csv(write(tmp_path, BASIC.replace("L1_1", "weird")))

    def test_assessment_times_comment(self, tmp_path):
        data = load_csv(write(tmp_path, "# v: 0, 2\n" + BASIC))
        assert np.array_equal(data.assessment_times, [0.0, 2.0])

    def test_non_increasing_times_rejected(self, tmp_path):
        with pytest.raises(DataError, match="increasing"):
            load_csv(write(tmp_path, "# v: 2, 2\n" + BASIC))

    def test_round_trip(self, tmp_path, rng):
        data = random_dataset(rng, n=17, tau=3, p=[2, 1, 3])
        path = tmp_path / "rt.csv"
        write_csv(data, path)
        again = load_csv(path)
        assert data.equals(again)
        write_csv(again, tmp_path / "rt2.csv")
        assert (tmp_path / "rt.csv").read_text() == (tmp_path / "rt2.csv").read_text()


class TestDatasetInvariants:
    def test_requires_two_individuals(self):
        with pytest.raises(DataError, match="2 individuals"):
            LongitudinalDataset(covariates=(np.zeros((1, 1)),),
                                exposures=np.zeros((1, 1)),
                                outcomes=np.zeros((1, 1)),
                                assessment_times=np.array([1.0]))

    def test_rejects_nan(self, rng):
        data = random_dataset(rng, 5, 2)
        bad = data.outcomes.copy()
        bad[3, 1] = np.nan
        with pytest.raises(DataError, match="row 3"):
            LongitudinalDataset(covariates=data.covariates, exposures=data.exposures,
                                outcomes=bad, assessment_times=data.assessment_times)

    def test_ragged_rejected(self, rng):
        data = random_dataset(rng, 5, 2)
        with pytest.raises(DataError):
            LongitudinalDataset(covariates=(data.covariates[0][:4], data.covariates[1]),
                                exposures=data.exposures, outcomes=data.outcomes,
                                assessment_times=data.assessment_times)


class TestHistoryFeatures:
    def test_t1_is_l1_alone(self, rng):
        data = random_dataset(rng, 8, 3, p=[2, 1, 1])
        assert np.array_equal(history_features(data, 1), data.covariates[0])

    def test_t2_column_order(self, rng):
        data = random_dataset(rng, 8, 2)
        h = history_features(data, 2)
        expect = np.column_stack([data.exposures[:, 0], data.covariates[0][:, 0],
                                  data.covariates[1][:, 0], data.outcomes[:, 0]])
        assert np.array_equal(h, expect)
        assert history_feature_names((1, 1), 2) == ["A1", "L1_1", "L2_1", "Y1"]

    def test_width_matches_closed_form(self, rng):
        # oracle: direct enumeration of the feature count
        for _ in range(10):
            tau = int(rng.integers(1, 5))
            p = [int(rng.integers(0, 4)) for _ in range(tau)]
            data = random_dataset(rng, 6, tau, p=[max(x, 1) for x in p])
            p = data.p
            for t in range(1, tau + 1):
                expected = (t - 1) + sum(p[:t]) + (t - 1)
                assert history_features(data, t).shape[1] == expected

    def test_block_prefix_stability(self, rng):
        # every column of H_t appears unchanged in H_{t+1}
        data = random_dataset(rng, 6, 3, p=[2, 2, 2])
        for t in (1, 2):
            cols_t = set(history_feature_names(data.p, t))
            names_next = history_feature_names(data.p, t + 1)
            h_t = history_features(data, t)
            h_next = history_features(data, t + 1)
            for name in cols_t:
                i = history_feature_names(data.p, t).index(name)
                j = names_next.index(name)
                assert np.array_equal(h_t[:, i], h_next[:, j])

    def test_out_of_range(self, rng):
        data = random_dataset(rng, 6, 2)
        with pytest.raises(DataError):
            history_features(data, 3)
