"""Detection metrics: thresholds, AUROC, aggregates, uniformity checks."""

import csv

import numpy as np
import pytest
from scipy.stats import kstest

from conftest import make_corpus
from masf.errors import EmptyScores, LengthMismatch, OutOfRange, TooFewSamples
from masf.metrics import (
    ScoreSet,
    aggregate,
    auroc,
    evaluate_scores,
    ks_uniformity,
    qq_export,
    qq_rows,
    split_for_validation,
    tnr_threshold,
    tpr_at_tnr,
    write_metrics_csv,
)
from masf.tensor_io import read_manifest


class TestScoreSet:
    def test_validates_unit_interval(self):
        with pytest.raises(OutOfRange):
            ScoreSet(np.array([0.5, 1.2]), np.array([0.1]))
        with pytest.raises(OutOfRange):
            ScoreSet(np.array([0.5]), np.array([-0.1]))

    def test_rejects_empty_and_non_finite(self):
        with pytest.raises(EmptyScores):
            ScoreSet(np.array([]), np.array([0.1]))
        with pytest.raises(OutOfRange):
            ScoreSet(np.array([np.nan]), np.array([0.1]))

    def test_zero_and_one_are_legal(self):
        s = ScoreSet(np.array([0.0, 1.0]), np.array([0.5]), label="edge")
        assert s.label == "edge"


class TestThreshold:
    def test_budget_zero_picks_minimum(self):
        ins = np.arange(0.1, 1.05, 0.1)  # 0.1 .. 1.0
        # floor(0.05 * 10) = 0 -> smallest in-score
        assert tnr_threshold(ins, 0.95) == pytest.approx(0.1)

    def test_budget_allows_me_plus_one(self):
        ins = np.arange(0.1, 1.05, 0.1)
        # floor(0.2 * 10) = 2 -> third smallest
        assert tnr_threshold(ins, 0.8) == pytest.approx(0.3)

    def test_realized_fpr_never_exceeds_budget(self):
        rng = np.random.default_rng(61)
        for _ in range(50):
            ins = np.round(rng.uniform(0, 1, size=40), 1)  # heavy ties
            for tnr in (0.8, 0.9, 0.95):
                t = tnr_threshold(ins, tnr)
                assert np.mean(ins < t) <= 1.0 - tnr + 1e-12

    def test_tie_at_threshold_is_not_rejected(self):
        ins = np.array([0.2] * 5 + [0.8] * 15)
        t = tnr_threshold(ins, 0.9)  # budget 2 -> third smallest = 0.2
        assert t == 0.2
        assert np.mean(ins < t) == 0.0

    def test_tnr_bounds(self):
        with pytest.raises(OutOfRange):
            tnr_threshold(np.array([0.5]), 0.0)
        with pytest.raises(OutOfRange):
            tnr_threshold(np.array([0.5]), 1.5)

    def test_tpr_example(self):
        ins = np.arange(0.1, 1.05, 0.1)
        outs = np.array([0.05, 0.2])
        s = ScoreSet(ins, outs)
        # threshold 0.1; only 0.05 falls strictly below
        assert tpr_at_tnr(s, 0.95) == 0.5


class TestAuroc:
    def test_hand_computed(self):
        # pairs (in, out): out < in counts 1 -> 3 of 4
        s = ScoreSet(np.array([0.9, 0.8]), np.array([0.1, 0.85]))
        assert auroc(s) == pytest.approx(0.75)

    def test_ties_count_half(self):
        s = ScoreSet(np.array([0.5]), np.array([0.5]))
        assert auroc(s) == 0.5

    def test_identical_samples_give_half(self):
        rng = np.random.default_rng(67)
        x = rng.uniform(0, 1, 100)
        s = ScoreSet(x, x.copy())
        assert auroc(s) == pytest.approx(0.5, abs=1e-12)

    def test_perfect_separation(self):
        s = ScoreSet(np.linspace(0.6, 1.0, 20), np.linspace(0.0, 0.4, 30))
        assert auroc(s) == 1.0


class TestAggregate:
    def test_sample_standard_deviation(self):
        mean, sd, lo = aggregate([1.0, 2.0, 3.0])
        assert (mean, lo) == (2.0, 1.0)
        assert sd == pytest.approx(1.0)  # sample SD with n-1 = 2

    def test_single_value_has_zero_sd(self):
        assert aggregate([5.0]) == (5.0, 0.0, 5.0)


class TestKsUniformity:
    def test_point_mass_distance(self):
        # all mass at 0.5: D = 0.5 exactly
        d, p = ks_uniformity(np.full(20, 0.5))
        assert d == pytest.approx(0.5)
        assert p < 1e-4

    def test_matches_scipy_asymptotic(self):
        rng = np.random.default_rng(71)
        arr = rng.uniform(0, 1, 500)
        d, p = ks_uniformity(arr)
        ref = kstest(arr, "uniform", mode="asymp")
        assert d == pytest.approx(ref.statistic, abs=1e-12)
        assert p == pytest.approx(ref.pvalue, abs=1e-8)

    def test_minimum_sample_size(self):
        with pytest.raises(TooFewSamples):
            ks_uniformity(np.full(19, 0.5))

    def test_range_checked(self):
        with pytest.raises(OutOfRange):
            ks_uniformity(np.linspace(0.0, 1.2, 25))


class TestQq:
    def test_grid_and_quantiles(self):
        rng = np.random.default_rng(73)
        arr = rng.uniform(0, 1, 400)
        rows = qq_rows(arr, resolution=0.25)
        assert rows.shape == (3, 2)
        np.testing.assert_allclose(rows[:, 0], [0.25, 0.5, 0.75])
        np.testing.assert_allclose(rows[:, 1], np.quantile(arr, [0.25, 0.5, 0.75]))

    def test_default_resolution_rows(self):
        rows = qq_rows(np.linspace(0, 1, 50))
        assert rows.shape == (999, 2)

    def test_resolution_bounds(self):
        with pytest.raises(OutOfRange):
            qq_rows(np.linspace(0, 1, 50), resolution=0.5)

    def test_export_round_trip(self, tmp_path):
        arr = np.linspace(0, 1, 100)
        path = tmp_path / "qq.csv"
        rows = qq_export(arr, path, resolution=0.2)
        with open(path) as fh:
            got = list(csv.reader(fh))
        assert got[0] == ["uniform", "empirical"]
        back = np.array([[float(a), float(b)] for a, b in got[1:]])
        np.testing.assert_allclose(back[:, 1], rows[:, 1], rtol=1e-15)


class TestEvaluate:
    def test_keys_and_consistency(self):
        s = ScoreSet(np.linspace(0.1, 1.0, 10), np.array([0.05, 0.2]), label="x")
        row = evaluate_scores(s, tnr=0.95)
        assert row["label"] == "x"
        assert row["n_in"] == 10 and row["n_out"] == 2
        assert row["tpr"] == tpr_at_tnr(s, 0.95)
        assert row["auroc"] == auroc(s)

    def test_metrics_csv_round_trip(self, tmp_path):
        s = ScoreSet(np.linspace(0.1, 1.0, 10), np.array([0.05, 0.2]), label="x")
        rows = [evaluate_scores(s)]
        path = tmp_path / "m.csv"
        write_metrics_csv(rows, path)
        with open(path) as fh:
            got = list(csv.DictReader(fh))
        assert len(got) == 1
        assert float(got[0]["tpr"]) == rows[0]["tpr"]

    def test_empty_rows_rejected(self, tmp_path):
        with pytest.raises(EmptyScores):
            write_metrics_csv([], tmp_path / "m.csv")


class TestSplitForValidation:
    def build(self, tmp_path, per_class=(10, 7)):
        rng = np.random.default_rng(79)
        samples = []
        for c, n in enumerate(per_class):
            for i in range(n):
                samples.append(
                    (f"c{c}_{i}", [rng.standard_normal((2, 1, 1))], c, None)
                )
        return read_manifest(make_corpus(tmp_path / "c", [(2, 1, 1)], samples))

    def test_tail_split_sizes(self, tmp_path):
        m = self.build(tmp_path)
        cal, test = split_for_validation(m, 0.2)
        # ceil(0.2*10)=2, ceil(0.2*7)=2 held out
        assert len(test.samples) == 4
        assert len(cal.samples) == 13
        assert {s.id for s in test.samples} == {"c0_8", "c0_9", "c1_5", "c1_6"}

    def test_order_preserved(self, tmp_path):
        m = self.build(tmp_path)
        cal, _ = split_for_validation(m, 0.2)
        ids = [s.id for s in cal.samples]
        assert ids == sorted(ids, key=ids.index)  # stable manifest order

    def test_fraction_bounds(self, tmp_path):
        m = self.build(tmp_path)
        with pytest.raises(OutOfRange):
            split_for_validation(m, 0.0)
        with pytest.raises(OutOfRange):
            split_for_validation(m, 1.0)

    def test_degenerate_class_rejected(self, tmp_path):
        m = self.build(tmp_path, per_class=(1,))
        with pytest.raises(LengthMismatch):
            split_for_validation(m, 0.5)
