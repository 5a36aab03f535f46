"""Streaming quantile estimation for calibration-time eCDF tables.

A tracker consumes a value stream in fixed-size batches and produces a frozen
grid of (percentile, value) pairs:

* body percentiles are running means of per-batch empirical percentiles, so
  the achievable body resolution is 1 / batch_size;
* exact smallest / largest ``tail_k`` values are retained across the whole
  stream, and at finalize ``tail_grid`` ranks per side are kept at regular
  intervals, with percentiles assigned from their global order-statistic
  rank under the add-one convention (rank r from the bottom maps to
  (r + 1) / (n + 1), which is exactly what the brute-force add-one eCDF
  returns at that value).

Lookups use a step-function convention and return add-one tail estimates:
the left tail at ``x`` is the stored percentile of the largest grid value
<= x (1 / (n + 1) when nothing is), and the right tail mirrors it through
the count of grid values strictly below x, so a query at the r-th smallest
of n retained points recovers exactly (r + 1) / (n + 1) on the left and
(n - r + 2) / (n + 1) on the right.  Both tails live in [1 / (n + 1), 1]
and never reach zero, which keeps log-based combiners finite.  Linear
interpolation between grid points is available as an opt-in lookup method
for power studies; the step default is the conservative choice.

``ArrayQuantileTracker`` runs ``m`` independent streams in lockstep on a
shared batch matrix; ``QuantileTracker`` is the single-stream view of it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    EmptyBatch,
    FrozenTracker,
    InsufficientData,
    LengthMismatch,
    NotFinalized,
    OutOfRange,
)

__all__ = [
    "TrackerConfig",
    "QuantileTracker",
    "ArrayQuantileTracker",
    "QuantileTable",
    "TableBank",
    "lookup_tails",
    "DEFAULT_BODY_PERCENTILES",
    "LAYER_BODY_PERCENTILES",
]

# Body grid: deciles plus the 0.025 / 0.975 points used by two-tailed
# channel tests.
DEFAULT_BODY_PERCENTILES = tuple(
    sorted([0.025] + [i / 10 for i in range(1, 10)] + [0.975])
)

# Layer and final statistics are calibrated on a uniform 1e-3 grid.
LAYER_BODY_PERCENTILES = tuple(i / 1000 for i in range(1, 1000))

_TAIL_MODES = ("auto", "always", "never")


@dataclass(frozen=True)
class TrackerConfig:
    """Knobs for a quantile tracker.

    tail_mode controls whether exact tail retention contributes grid points:
    "auto" enables it only when more than one batch was observed, "always"
    and "never" force it on or off.
    """

    batch_size: int = 1000
    body_percentiles: tuple[float, ...] = DEFAULT_BODY_PERCENTILES
    tail_k: int = 200
    tail_grid: int = 10
    tail_mode: str = "auto"

    def __post_init__(self) -> None:
        if self.batch_size < 2:
            raise OutOfRange("batch_size must be >= 2")
        ps = tuple(float(p) for p in self.body_percentiles)
        if not ps or any(not 0.0 < p < 1.0 for p in ps):
            raise OutOfRange("body percentiles must lie strictly in (0, 1)")
        if list(ps) != sorted(set(ps)):
            raise OutOfRange("body percentiles must be strictly increasing")
        object.__setattr__(self, "body_percentiles", ps)
        if not 1 <= self.tail_grid <= self.tail_k:
            raise OutOfRange("need tail_k >= tail_grid >= 1")
        if self.tail_mode not in _TAIL_MODES:
            raise OutOfRange(f"tail_mode must be one of {_TAIL_MODES}")

    def with_extra_percentiles(self, extra) -> "TrackerConfig":
        ps = sorted(set(self.body_percentiles) | {float(p) for p in extra})
        return TrackerConfig(
            batch_size=self.batch_size,
            body_percentiles=tuple(ps),
            tail_k=self.tail_k,
            tail_grid=self.tail_grid,
            tail_mode=self.tail_mode,
        )


@dataclass(frozen=True)
class QuantileTable:
    """Frozen (percentile, value) grid for one stream.

    percentiles and values are equal-length ascending float64 arrays; the
    grid is monotone (values never decrease as percentiles increase).
    """

    percentiles: np.ndarray
    values: np.ndarray
    n_total: int
    tails_used: bool

    def __post_init__(self) -> None:
        p = np.asarray(self.percentiles, dtype=np.float64)
        v = np.asarray(self.values, dtype=np.float64)
        if p.shape != v.shape or p.ndim != 1 or p.size == 0:
            raise LengthMismatch("percentile and value grids must match")
        object.__setattr__(self, "percentiles", p)
        object.__setattr__(self, "values", v)

    @property
    def floor(self) -> float:
        return 1.0 / (self.n_total + 1)

    def cdf(self, x, method: str = "step") -> np.ndarray:
        """Estimated left-tail probability P(T <= x) at each query point.

        The step method returns the stored percentile of the largest grid
        value <= x, or the add-one floor when x is below the whole grid; the
        result lives in [1/(n+1), 1].  The linear method interpolates between
        grid points instead (less conservative, meant for power studies) and
        falls back to step on a degenerate single-value grid.
        """
        xs = np.asarray(x, dtype=np.float64)
        if method == "linear" and self.values[-1] > self.values[0]:
            p = np.interp(xs, self.values, self.percentiles, left=self.floor)
            return np.maximum(p, self.floor)
        if method not in ("step", "linear"):
            raise OutOfRange("lookup method must be 'step' or 'linear'")
        idx = np.searchsorted(self.values, xs, side="right")
        return np.where(idx > 0, self.percentiles[np.maximum(idx - 1, 0)], self.floor)

    def right_tail(self, x, method: str = "step") -> np.ndarray:
        """Estimated right-tail probability P(T >= x) at each query point.

        Mirrors cdf through the strict-below count: with c grid values
        strictly below x, the step lookup recovers the add-one estimate
        (n - c + 1) / (n + 1) exactly, so a point-mass table yields ~1 at
        its own value and the floor for anything above it.
        """
        xs = np.asarray(x, dtype=np.float64)
        n1 = self.n_total + 1.0
        if method == "linear" and self.values[-1] > self.values[0]:
            r = 1.0 - self.cdf(xs, method="linear") + self.floor
            return np.clip(r, self.floor, 1.0)
        if method not in ("step", "linear"):
            raise OutOfRange("lookup method must be 'step' or 'linear'")
        idx = np.searchsorted(self.values, xs, side="left")
        p_prev = self.percentiles[np.maximum(idx - 1, 0)]
        # Stored percentiles are (count + 1) / (n + 1); invert to counts so
        # the mirrored tail is one exact integer division, not 1 - p noise.
        c_prev = np.rint(p_prev * n1) - 1.0
        r = np.clip((n1 - c_prev) / n1, self.floor, 1.0)
        return np.where(idx > 0, r, 1.0)

    def quantile(self, p: float) -> float:
        """Value of the smallest grid point with percentile >= p.

        Linear interpolation between bracketing grid points; clamped to the
        grid's end values outside the stored percentile range.
        """
        return float(np.interp(p, self.percentiles, self.values))


def lookup_tails(
    table: QuantileTable, x: float, method: str = "step"
) -> tuple[float, float]:
    """Conservative (right_tail, left_tail) probabilities at ``x``.

    left_tail estimates P(T <= x), right_tail estimates P(T >= x); both are
    add-one eCDF values in [1/(n+1), 1], so downstream log-based combiners
    never see a zero and the two-sided p-value min(1, 2*min(tails)) is
    stochastically >= uniform under the null.
    """
    if not np.isfinite(x):
        raise OutOfRange("lookup_tails requires a finite query point")
    return (
        float(table.right_tail(x, method=method)),
        float(table.cdf(x, method=method)),
    )


class ArrayQuantileTracker:
    """Tracks ``m`` value streams fed in lockstep batches of shape (b, m)."""

    def __init__(self, config: TrackerConfig, streams: int = 1) -> None:
        if streams < 1:
            raise OutOfRange("streams must be >= 1")
        self.config = config
        self.streams = streams
        self._acc = np.zeros((len(config.body_percentiles), streams))
        self._weight = 0
        self._n_total = 0
        self._batches = 0
        self._short_batches = 0
        self._bottom = np.empty((0, streams))
        self._top = np.empty((0, streams))
        self._frozen = False
        self._tables: list[QuantileTable] | None = None

    @property
    def n_total(self) -> int:
        return self._n_total

    def observe_batch(self, values) -> None:
        """Consume one batch; rows are samples, columns are streams.

        Batches shorter than config.batch_size are allowed (intended for the
        final partial batch) and are weighted by their actual size.
        """
        if self._frozen:
            raise FrozenTracker("tracker already finalized")
        v = np.asarray(values, dtype=np.float64)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[1] != self.streams:
            raise LengthMismatch(f"expected (batch, {self.streams}) values")
        if v.shape[0] == 0:
            raise EmptyBatch("observe_batch needs at least one value")
        if v.shape[0] > self.config.batch_size:
            raise LengthMismatch("batch longer than configured batch_size")
        if not np.all(np.isfinite(v)):
            raise OutOfRange("tracker values must be finite")
        if v.shape[0] < self.config.batch_size:
            self._short_batches += 1

        pcts = np.quantile(v, self.config.body_percentiles, axis=0)
        self._acc += pcts * v.shape[0]
        self._weight += v.shape[0]
        self._n_total += v.shape[0]
        self._batches += 1

        k = self.config.tail_k
        self._bottom = np.sort(np.vstack([self._bottom, v]), axis=0)[:k]
        self._top = np.sort(np.vstack([self._top, v]), axis=0)[-k:]

    def _tails_enabled(self) -> bool:
        mode = self.config.tail_mode
        if mode == "always":
            return True
        if mode == "never":
            return False
        return self._n_total > self.config.batch_size

    def finalize(self) -> list[QuantileTable]:
        """Freeze the tracker and return one table per stream."""
        if self._frozen:
            raise FrozenTracker("tracker already finalized")
        if self._weight < self.config.batch_size:
            raise InsufficientData("finalize requires at least one full batch")
        self._frozen = True

        n = self._n_total
        body_p = np.asarray(self.config.body_percentiles)
        body_v = self._acc / self._weight  # (P, m)

        if not self._tails_enabled():
            values = np.maximum.accumulate(body_v, axis=0)
            self._tables = [
                QuantileTable(body_p.copy(), values[:, j], n, False)
                for j in range(self.streams)
            ]
            return self._tables

        kb = self._bottom.shape[0]
        kt = self._top.shape[0]
        g = self.config.tail_grid
        # Ranks at regular intervals spanning each retained tail, extreme
        # ranks always included.
        bot_ranks = np.unique(np.round(np.linspace(1, kb, min(g, kb))).astype(int))
        top_ranks = np.unique(np.round(np.linspace(1, kt, min(g, kt))).astype(int))

        # Nominal percentile coverage of the tails decides which body points
        # survive; the rule must not depend on per-stream tie structure so
        # every stream keeps an identical grid length.
        bot_limit = (kb + 1) / (n + 1)
        top_limit = (n - kt + 2) / (n + 1)
        keep = (body_p > bot_limit) & (body_p < top_limit)

        tables = []
        for j in range(self.streams):
            bot = self._bottom[:, j]
            top = self._top[:, j]
            bv = bot[bot_ranks - 1]
            # Tie-aware global rank: every stream value <= bot[r-1] is
            # retained, so counting inside the retained window is exact
            # (up to ties that spill past the window boundary).
            bc = np.searchsorted(bot, bv, side="right")
            bp = (bc + 1.0) / (n + 1.0)
            tv = top[kt - top_ranks][::-1]
            tc = n - (kt - np.searchsorted(top, tv, side="right"))
            tp = (tc + 1.0) / (n + 1.0)

            kv = body_v[keep, j]
            if kv.size:
                kv = np.clip(kv, bv[-1], tv[0])
            p = np.concatenate([bp, body_p[keep], tp])
            v = np.concatenate([bv, kv, tv])
            order = np.argsort(p, kind="stable")
            p = p[order]
            v = np.maximum.accumulate(v[order])
            tables.append(QuantileTable(p, v, n, True))
        self._tables = tables
        return tables

    def finalize_bank(self) -> "TableBank":
        return TableBank.from_tables(self.finalize())

    def tables(self) -> list[QuantileTable]:
        if self._tables is None:
            raise NotFinalized("tracker has not been finalized")
        return self._tables


class QuantileTracker:
    """Single-stream tracker; the scalar view of ArrayQuantileTracker."""

    def __init__(self, config: TrackerConfig | None = None) -> None:
        self._inner = ArrayQuantileTracker(config or TrackerConfig(), streams=1)

    @property
    def config(self) -> TrackerConfig:
        return self._inner.config

    @property
    def n_total(self) -> int:
        return self._inner.n_total

    def observe_batch(self, values) -> None:
        v = np.asarray(values, dtype=np.float64)
        if v.ndim != 1:
            raise LengthMismatch("scalar tracker expects a 1-d batch")
        self._inner.observe_batch(v[:, None])

    def finalize(self) -> QuantileTable:
        return self._inner.finalize()[0]


@dataclass
class TableBank:
    """m frozen tables with identical grid lengths, stacked for fast lookup."""

    percentiles: np.ndarray  # (m, G)
    values: np.ndarray  # (m, G)
    n_total: int
    tails_used: bool
    floor: float = field(init=False)

    def __post_init__(self) -> None:
        if self.percentiles.shape != self.values.shape or self.percentiles.ndim != 2:
            raise LengthMismatch("bank grids must share one (m, G) shape")
        self.floor = 1.0 / (self.n_total + 1)

    @classmethod
    def from_tables(cls, tables: list[QuantileTable]) -> "TableBank":
        sizes = {t.percentiles.size for t in tables}
        if len(sizes) != 1:
            raise LengthMismatch("bank requires equal-length grids")
        if len({(t.n_total, t.tails_used) for t in tables}) != 1:
            raise LengthMismatch("bank requires homogeneous table metadata")
        return cls(
            percentiles=np.stack([t.percentiles for t in tables]),
            values=np.stack([t.values for t in tables]),
            n_total=tables[0].n_total,
            tails_used=tables[0].tails_used,
        )

    def to_tables(self) -> list[QuantileTable]:
        return [
            QuantileTable(self.percentiles[j], self.values[j], self.n_total, self.tails_used)
            for j in range(self.percentiles.shape[0])
        ]

    @property
    def streams(self) -> int:
        return self.percentiles.shape[0]

    def cdf(self, x: np.ndarray) -> np.ndarray:
        """Step-convention left tails for queries x of shape (batch, m)."""
        x = np.asarray(x, dtype=np.float64)
        counts = np.sum(self.values[None, :, :] <= x[:, :, None], axis=2)
        cols = np.arange(self.streams)[None, :]
        gathered = self.percentiles[cols, np.maximum(counts - 1, 0)]
        return np.where(counts > 0, gathered, self.floor)

    def tails(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(right, left) add-one tails for queries x of shape (batch, m).

        Matches lookup_tails on the individual tables, vectorized over the
        batch and the m streams in one pass.
        """
        x = np.asarray(x, dtype=np.float64)
        expanded = self.values[None, :, :]
        queries = x[:, :, None]
        counts_le = np.sum(expanded <= queries, axis=2)
        counts_lt = np.sum(expanded < queries, axis=2)
        cols = np.arange(self.streams)[None, :]
        left = np.where(
            counts_le > 0,
            self.percentiles[cols, np.maximum(counts_le - 1, 0)],
            self.floor,
        )
        n1 = self.n_total + 1.0
        p_prev = self.percentiles[cols, np.maximum(counts_lt - 1, 0)]
        c_prev = np.rint(p_prev * n1) - 1.0
        right_raw = np.clip((n1 - c_prev) / n1, self.floor, 1.0)
        right = np.where(counts_lt > 0, right_raw, 1.0)
        return right, left

    def quantile(self, p: float) -> np.ndarray:
        """Per-stream interpolated quantile at level p, shape (m,)."""
        return np.array(
            [np.interp(p, self.percentiles[j], self.values[j]) for j in range(self.streams)]
        )
