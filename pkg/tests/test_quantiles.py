"""Streaming quantile tracker and table lookup tests.

The anchor is the single-batch full-tail oracle: there the grid must carry
the exact add-one eCDF of the data, bit for bit, on both tails.  The
remaining tests pin the streaming approximations (running-mean body, tail
merge), the lookup conventions, and the failure modes.
"""

import numpy as np
import pytest

from conftest import ecdf_left, ecdf_right
from masf.errors import (
    EmptyBatch,
    FrozenTracker,
    InsufficientData,
    LengthMismatch,
    NotFinalized,
    OutOfRange,
)
from masf.quantiles import (
    DEFAULT_BODY_PERCENTILES,
    LAYER_BODY_PERCENTILES,
    ArrayQuantileTracker,
    QuantileTracker,
    TableBank,
    TrackerConfig,
    lookup_tails,
)


def full_tail_table(data, grid=None):
    """Single-batch table with every value retained exactly in the tails."""
    data = np.asarray(data, dtype=np.float64)
    n = data.size
    cfg = TrackerConfig(
        batch_size=n, tail_k=n, tail_grid=grid or n, tail_mode="always"
    )
    tr = QuantileTracker(cfg)
    tr.observe_batch(data)
    return tr.finalize()


class TestTrackerConfig:
    def test_defaults_are_valid(self):
        cfg = TrackerConfig()
        assert cfg.body_percentiles == DEFAULT_BODY_PERCENTILES
        assert 0.025 in cfg.body_percentiles and 0.975 in cfg.body_percentiles

    def test_layer_grid_is_uniform_per_mille(self):
        assert len(LAYER_BODY_PERCENTILES) == 999
        assert LAYER_BODY_PERCENTILES[0] == 0.001
        assert LAYER_BODY_PERCENTILES[-1] == 0.999

    def test_batch_size_floor(self):
        with pytest.raises(OutOfRange):
            TrackerConfig(batch_size=1)

    def test_percentiles_must_be_interior(self):
        with pytest.raises(OutOfRange):
            TrackerConfig(body_percentiles=(0.0, 0.5))
        with pytest.raises(OutOfRange):
            TrackerConfig(body_percentiles=(0.5, 1.0))

    def test_percentiles_must_increase(self):
        with pytest.raises(OutOfRange):
            TrackerConfig(body_percentiles=(0.5, 0.25))
        with pytest.raises(OutOfRange):
            TrackerConfig(body_percentiles=(0.5, 0.5))

    def test_tail_grid_bounded_by_tail_k(self):
        with pytest.raises(OutOfRange):
            TrackerConfig(tail_k=5, tail_grid=6)
        with pytest.raises(OutOfRange):
            TrackerConfig(tail_grid=0)

    def test_tail_mode_names(self):
        with pytest.raises(OutOfRange):
            TrackerConfig(tail_mode="sometimes")

    def test_with_extra_percentiles_merges_sorted(self):
        cfg = TrackerConfig().with_extra_percentiles([0.05, 0.5, 0.95])
        ps = cfg.body_percentiles
        assert 0.05 in ps and 0.95 in ps
        assert list(ps) == sorted(set(ps))


class TestBodyEstimates:
    def test_single_batch_body_is_exact_quantile(self):
        data = np.arange(1.0, 1001.0)
        cfg = TrackerConfig(batch_size=1000, tail_mode="never")
        tr = QuantileTracker(cfg)
        tr.observe_batch(data)
        table = tr.finalize()
        # one batch: the running mean equals the batch percentile itself
        assert table.quantile(0.5) == np.quantile(data, 0.5) == 500.5
        for p in cfg.body_percentiles:
            assert table.quantile(p) == pytest.approx(np.quantile(data, p), abs=1e-9)

    def test_identical_batches_do_not_move_the_mean(self):
        data = np.linspace(-2.0, 2.0, 500)
        cfg = TrackerConfig(batch_size=500, tail_mode="never")
        one = QuantileTracker(cfg)
        one.observe_batch(data)
        two = QuantileTracker(cfg)
        two.observe_batch(data)
        two.observe_batch(data)
        t1, t2 = one.finalize(), two.finalize()
        np.testing.assert_array_equal(t1.values, t2.values)
        assert t2.n_total == 1000

    def test_normal_sample_quantile_accuracy(self):
        rng = np.random.default_rng(42)
        data = rng.standard_normal(5000)
        cfg = TrackerConfig(batch_size=500)
        tr = QuantileTracker(cfg)
        for i in range(10):
            tr.observe_batch(data[i * 500 : (i + 1) * 500])
        table = tr.finalize()
        # 0.975 normal quantile is 1.9600; running-mean over 10 batches of
        # 500 stays well within 0.06
        assert abs(table.quantile(0.975) - 1.95996) < 0.06
        assert abs(table.quantile(0.5) - 0.0) < 0.06


class TestTailRetention:
    def test_extremes_survive_batch_order(self):
        rng = np.random.default_rng(0)
        data = np.arange(1.0, 2001.0)
        rng.shuffle(data)
        cfg = TrackerConfig(batch_size=1000, tail_k=3, tail_grid=3, tail_mode="always")
        tr = QuantileTracker(cfg)
        tr.observe_batch(data[:1000])
        tr.observe_batch(data[1000:])
        table = tr.finalize()
        # bottom ranks 1..3 of 1..2000 under add-one: value r -> (r+1)/2001
        for r in (1, 2, 3):
            assert table.cdf(float(r)) == (r + 1) / 2001.0
        for v in (1998.0, 1999.0, 2000.0):
            assert table.cdf(v) == (v + 1) / 2001.0
        assert table.values[0] == 1.0 and table.values[-1] == 2000.0

    def test_constant_stream(self):
        cfg = TrackerConfig(batch_size=100, tail_k=5, tail_grid=5, tail_mode="always")
        tr = QuantileTracker(cfg)
        tr.observe_batch(np.full(100, 7.0))
        tr.observe_batch(np.full(100, 7.0))
        table = tr.finalize()
        np.testing.assert_array_equal(table.values, np.full(table.values.size, 7.0))
        floor = 1.0 / 201.0
        right, left = lookup_tails(table, 7.0)
        # at the point mass both tails cover everything
        assert right == 1.0 and left == 1.0
        # moving off the mass in either direction leaves only the floor on
        # the small side
        assert lookup_tails(table, 7.5) == (floor, 1.0)
        assert lookup_tails(table, 6.5) == (1.0, floor)

    def test_overlapping_tails_allowed(self):
        # tail_k beyond n/2 makes the two windows overlap; grid must stay
        # monotone and lookups exact
        data = np.arange(10.0)
        table = full_tail_table(data)
        assert np.all(np.diff(table.values) >= 0)
        assert np.all(np.diff(table.percentiles) >= 0)
        assert table.cdf(9.0) == 1.0

    def test_tail_mode_auto_needs_more_than_one_batch(self):
        cfg = TrackerConfig(batch_size=50, tail_k=5, tail_grid=5)
        one = QuantileTracker(cfg)
        one.observe_batch(np.arange(50.0))
        assert one.finalize().tails_used is False

        two = QuantileTracker(cfg)
        two.observe_batch(np.arange(50.0))
        two.observe_batch(np.arange(50.0, 100.0))
        assert two.finalize().tails_used is True

    def test_tail_mode_never_keeps_body_only(self):
        cfg = TrackerConfig(batch_size=50, tail_mode="never")
        tr = QuantileTracker(cfg)
        tr.observe_batch(np.arange(50.0))
        tr.observe_batch(np.arange(50.0, 100.0))
        table = tr.finalize()
        assert table.tails_used is False
        assert table.percentiles.size == len(cfg.body_percentiles)


class TestSingleBatchOracle:
    """Full-tail grids must reproduce the brute-force add-one eCDF exactly."""

    def check_grid(self, data):
        table = full_tail_table(data)
        for v in table.values:
            r, l = lookup_tails(table, float(v))
            assert l == ecdf_left(v, data)
            assert r == ecdf_right(v, data)

    def test_continuous_data(self):
        rng = np.random.default_rng(101)
        self.check_grid(rng.standard_normal(401))

    def test_tie_heavy_data(self):
        rng = np.random.default_rng(103)
        self.check_grid(rng.integers(0, 12, size=300).astype(float))

    def test_off_grid_queries_bracket_the_truth(self):
        # between grid points the step lookup reads the last grid point:
        # the left tail can only be under-counted and the right tail only
        # over-counted, and both match the truth again at the grid
        rng = np.random.default_rng(107)
        data = rng.standard_normal(150)
        cfg = TrackerConfig(batch_size=150, tail_k=75, tail_grid=7, tail_mode="always")
        tr = QuantileTracker(cfg)
        tr.observe_batch(data)
        table = tr.finalize()
        for x in rng.uniform(data.min() - 0.5, data.max() + 0.5, size=200):
            r, l = lookup_tails(table, float(x))
            assert l <= ecdf_left(x, data) + 1e-15
            assert r >= ecdf_right(x, data) - 1e-15

    def test_below_grid_is_floor_left_full_right(self):
        data = np.arange(1.0, 9.0)
        table = full_tail_table(data)
        r, l = lookup_tails(table, -5.0)
        assert l == 1.0 / 9.0
        assert r == 1.0


class TestLookupConventions:
    def test_monotonicity(self):
        rng = np.random.default_rng(109)
        table = full_tail_table(rng.standard_normal(64), grid=8)
        xs = np.linspace(-4, 4, 301)
        cdf = table.cdf(xs)
        rt = table.right_tail(xs)
        assert np.all(np.diff(cdf) >= 0)
        assert np.all(np.diff(rt) <= 0)
        assert cdf.min() >= table.floor and cdf.max() <= 1.0
        assert rt.min() >= table.floor and rt.max() <= 1.0

    def test_linear_method_interpolates(self):
        table = full_tail_table(np.arange(1.0, 11.0))
        # halfway between the values 5 (p 6/11) and 6 (p 7/11)
        assert table.cdf(5.5, method="linear") == pytest.approx(6.5 / 11.0, abs=1e-12)
        step = table.cdf(5.5)
        assert step == 6.0 / 11.0
        # linear right tail keeps the complement-plus-floor identity
        r = table.right_tail(5.5, method="linear")
        assert r == pytest.approx(1.0 - 6.5 / 11.0 + 1.0 / 11.0, abs=1e-12)

    def test_linear_falls_back_on_point_mass(self):
        cfg = TrackerConfig(batch_size=10, tail_k=2, tail_grid=2, tail_mode="always")
        tr = QuantileTracker(cfg)
        tr.observe_batch(np.full(10, 3.0))
        table = tr.finalize()
        assert table.cdf(3.0, method="linear") == table.cdf(3.0)

    def test_unknown_method_rejected(self):
        table = full_tail_table(np.arange(4.0))
        with pytest.raises(OutOfRange):
            table.cdf(1.0, method="spline")
        with pytest.raises(OutOfRange):
            table.right_tail(1.0, method="spline")

    def test_non_finite_query_rejected(self):
        table = full_tail_table(np.arange(4.0))
        with pytest.raises(OutOfRange):
            lookup_tails(table, np.inf)

    def test_quantile_clamps_to_grid_ends(self):
        table = full_tail_table(np.arange(1.0, 11.0))
        assert table.quantile(1e-9) == table.values[0]
        assert table.quantile(1.0) == table.values[-1]


class TestArrayTracker:
    def test_columns_match_scalar_trackers(self):
        rng = np.random.default_rng(211)
        data = rng.standard_normal((300, 4))
        cfg = TrackerConfig(batch_size=100, tail_k=20, tail_grid=5)
        arr = ArrayQuantileTracker(cfg, streams=4)
        scalars = [QuantileTracker(cfg) for _ in range(4)]
        for i in range(3):
            batch = data[i * 100 : (i + 1) * 100]
            arr.observe_batch(batch)
            for j, tr in enumerate(scalars):
                tr.observe_batch(batch[:, j])
        tables = arr.finalize()
        for j, tr in enumerate(scalars):
            solo = tr.finalize()
            np.testing.assert_array_equal(tables[j].percentiles, solo.percentiles)
            np.testing.assert_array_equal(tables[j].values, solo.values)

    def test_short_final_batch_weighting(self):
        rng = np.random.default_rng(213)
        data = rng.standard_normal(130)
        cfg = TrackerConfig(batch_size=100, tail_k=10, tail_grid=5)
        tr = QuantileTracker(cfg)
        tr.observe_batch(data[:100])
        tr.observe_batch(data[100:])
        table = tr.finalize()
        assert table.n_total == 130
        # body = (q(batch1)*100 + q(batch2)*30) / 130
        for i, p in enumerate(cfg.body_percentiles):
            want = (np.quantile(data[:100], p) * 100 + np.quantile(data[100:], p) * 30) / 130
            # grid points may be clipped into the tail window; check via the
            # untouched middle percentile only
            if p == 0.5:
                assert table.quantile(0.5) == pytest.approx(want, abs=1e-12)

    def test_determinism(self):
        rng = np.random.default_rng(217)
        data = rng.standard_normal((200, 3))
        cfg = TrackerConfig(batch_size=100, tail_k=15, tail_grid=5)
        outs = []
        for _ in range(2):
            tr = ArrayQuantileTracker(cfg, streams=3)
            tr.observe_batch(data[:100])
            tr.observe_batch(data[100:])
            outs.append(tr.finalize())
        for a, b in zip(*outs):
            np.testing.assert_array_equal(a.values, b.values)
            np.testing.assert_array_equal(a.percentiles, b.percentiles)

    def test_error_paths(self):
        cfg = TrackerConfig(batch_size=10, tail_k=2, tail_grid=2)
        tr = ArrayQuantileTracker(cfg, streams=2)
        with pytest.raises(LengthMismatch):
            tr.observe_batch(np.zeros((5, 3)))
        with pytest.raises(EmptyBatch):
            tr.observe_batch(np.zeros((0, 2)))
        with pytest.raises(LengthMismatch):
            tr.observe_batch(np.zeros((11, 2)))
        with pytest.raises(OutOfRange):
            tr.observe_batch(np.full((5, 2), np.nan))
        with pytest.raises(NotFinalized):
            tr.tables()
        with pytest.raises(InsufficientData):
            tr.finalize()  # nothing observed yet counts below one batch

        tr2 = ArrayQuantileTracker(cfg, streams=2)
        tr2.observe_batch(np.zeros((10, 2)))
        tr2.finalize()
        with pytest.raises(FrozenTracker):
            tr2.observe_batch(np.zeros((10, 2)))
        with pytest.raises(FrozenTracker):
            tr2.finalize()

    def test_scalar_facade_rejects_matrices(self):
        tr = QuantileTracker(TrackerConfig(batch_size=10, tail_k=2, tail_grid=2))
        with pytest.raises(LengthMismatch):
            tr.observe_batch(np.zeros((5, 2)))


class TestTableBank:
    def build_bank(self, seed=311, n=120, m=5):
        rng = np.random.default_rng(seed)
        data = rng.standard_normal((n, m))
        cfg = TrackerConfig(batch_size=60, tail_k=12, tail_grid=4)
        tr = ArrayQuantileTracker(cfg, streams=m)
        tr.observe_batch(data[: n // 2])
        tr.observe_batch(data[n // 2 :])
        return tr.finalize_bank(), data

    def test_round_trip_tables(self):
        bank, _ = self.build_bank()
        again = TableBank.from_tables(bank.to_tables())
        np.testing.assert_array_equal(bank.values, again.values)
        np.testing.assert_array_equal(bank.percentiles, again.percentiles)

    def test_tails_match_scalar_lookup(self):
        bank, data = self.build_bank()
        tables = bank.to_tables()
        rng = np.random.default_rng(313)
        queries = rng.standard_normal((7, bank.streams)) * 2.0
        right, left = bank.tails(queries)
        for i in range(queries.shape[0]):
            for j in range(bank.streams):
                r, l = lookup_tails(tables[j], float(queries[i, j]))
                assert right[i, j] == r
                assert left[i, j] == l

    def test_cdf_matches_tables(self):
        bank, _ = self.build_bank(seed=317)
        queries = np.linspace(-3, 3, 11)[:, None].repeat(bank.streams, axis=1)
        lefts = bank.cdf(queries)
        for j, table in enumerate(bank.to_tables()):
            np.testing.assert_array_equal(lefts[:, j], table.cdf(queries[:, j]))

    def test_mixed_grid_lengths_rejected(self):
        bank, _ = self.build_bank()
        tables = bank.to_tables()
        clipped = tables[0].__class__(
            tables[0].percentiles[:-1], tables[0].values[:-1],
            tables[0].n_total, tables[0].tails_used,
        )
        with pytest.raises(LengthMismatch):
            TableBank.from_tables([clipped, tables[1]])

    def test_quantile_vector(self):
        bank, _ = self.build_bank()
        med = bank.quantile(0.5)
        assert med.shape == (bank.streams,)
        for j, table in enumerate(bank.to_tables()):
            assert med[j] == table.quantile(0.5)
