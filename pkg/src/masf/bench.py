"""Per-layer statistic cost benchmark.

Times how long one layer's detection statistic takes for several detector
families over a fixed sequence of convolutional feature-map shapes (a
MobileNetV2-sized trace, 52 conv outputs plus the logits).  Layers are
visited round-robin so every shape contributes equally, and the measured
loop only wraps the statistic call itself; inputs and per-layer model
state are built beforehand.

Statistics compared:

  max-simes-fisher   spatial max, per-channel table lookup, two-sided
                     p-values, Simes across channels, layer-table lookup
  mahalanobis        spatial mean, class-conditional quadratic distances
                     (shared precision), min over classes
  gram               power-1 Gram row sums with the GxG matrix formed
                     explicitly, then banded deviation totals
  gram-factored      same row sums via phi @ phi.sum(0), never forming G
  noop               returns a constant; measures harness overhead
"""

from __future__ import annotations

import csv
import math
import time
import zlib
from dataclasses import dataclass

import numpy as np

from .errors import OutOfRange

__all__ = [
    "MOBILENET_V2_SHAPES",
    "STATISTIC_IDS",
    "BenchSpec",
    "StatisticTiming",
    "run_bench",
    "write_bench_csv",
    "read_bench_csv",
    "shape_set_id",
]

# channels, height, width of every conv output in torchvision's
# mobilenet_v2 at 224x224 input, in forward order; final entry is the
# 1000-way classifier output treated as a 1x1 map
MOBILENET_V2_SHAPES = (
    (32, 112, 112),
    (32, 112, 112),
    (16, 112, 112),
    (96, 112, 112),
    (96, 56, 56),
    (24, 56, 56),
    (144, 56, 56),
    (144, 56, 56),
    (24, 56, 56),
    (144, 56, 56),
    (144, 28, 28),
    (32, 28, 28),
    (192, 28, 28),
    (192, 28, 28),
    (32, 28, 28),
    (192, 28, 28),
    (192, 28, 28),
    (32, 28, 28),
    (192, 28, 28),
    (192, 14, 14),
    (64, 14, 14),
    (384, 14, 14),
    (384, 14, 14),
    (64, 14, 14),
    (384, 14, 14),
    (384, 14, 14),
    (64, 14, 14),
    (384, 14, 14),
    (384, 14, 14),
    (64, 14, 14),
    (384, 14, 14),
    (384, 14, 14),
    (96, 14, 14),
    (576, 14, 14),
    (576, 14, 14),
    (96, 14, 14),
    (576, 14, 14),
    (576, 14, 14),
    (96, 14, 14),
    (576, 14, 14),
    (576, 7, 7),
    (160, 7, 7),
    (960, 7, 7),
    (960, 7, 7),
    (160, 7, 7),
    (960, 7, 7),
    (960, 7, 7),
    (160, 7, 7),
    (960, 7, 7),
    (960, 7, 7),
    (320, 7, 7),
    (1280, 7, 7),
    (1000, 1, 1),
)

STATISTIC_IDS = ("max-simes-fisher", "mahalanobis", "gram", "gram-factored", "noop")


def shape_set_id(shapes) -> str:
    """Stable label for a shape list, used in reports."""
    shapes = tuple(tuple(int(v) for v in s) for s in shapes)
    if shapes == MOBILENET_V2_SHAPES:
        return "mobilenet-v2-53"
    digest = zlib.crc32(repr(shapes).encode()) & 0xFFFFFFFF
    return f"custom-{len(shapes)}-{digest:08x}"


@dataclass(frozen=True)
class BenchSpec:
    statistics: tuple = STATISTIC_IDS
    shapes: tuple = MOBILENET_V2_SHAPES
    measured: int = 10_000
    warmup: int = 1_000
    classes: int = 1000
    channel_grid: int = 31
    layer_grid: int = 999
    seed: int = 2024

    def __post_init__(self) -> None:
        if not self.shapes:
            raise OutOfRange("shapes must be non-empty")
        for shape in self.shapes:
            if len(shape) != 3 or min(shape) < 1:
                raise OutOfRange("each shape must be three positive dims")
        unknown = [s for s in self.statistics if s not in STATISTIC_IDS]
        if unknown:
            raise OutOfRange(f"unknown statistics: {unknown}; known: {STATISTIC_IDS}")
        if not self.statistics:
            raise OutOfRange("statistics must be non-empty")
        if self.measured < 1 or self.warmup < 0:
            raise OutOfRange("measured must be >= 1 and warmup >= 0")
        if self.classes < 1 or self.channel_grid < 2 or self.layer_grid < 2:
            raise OutOfRange("classes must be >= 1 and grids >= 2")


@dataclass
class StatisticTiming:
    statistic: str
    shape_set: str
    executions: int
    rounds: int
    single_mean_ms: float
    single_sd_ms: float
    total_mean_ms: float
    total_sd_ms: float
    layer_means_ms: np.ndarray
    checksum: float


class _LayerState:
    """Pre-generated input and per-family model state for one shape."""

    def __init__(self, shape, classes, channel_grid, layer_grid, rng):
        c, h, w = shape
        self.shape = shape
        self.x = rng.standard_normal((c, h, w)).astype(np.float32)
        # channel tables: one sorted row per channel, shared percentile grid
        self.tables = np.sort(rng.standard_normal((c, channel_grid)), axis=1)
        self.grid = np.arange(1, channel_grid + 1) / (channel_grid + 1.0)
        self.floor = 1.0 / (channel_grid + 1.0)
        self.ranks = np.arange(1, c + 1, dtype=np.float64)
        self.layer_values = np.sort(rng.standard_normal(layer_grid))
        self.layer_percentiles = np.arange(1, layer_grid + 1) / (layer_grid + 1.0)
        # mahalanobis state: shared precision, per-class means
        a = rng.standard_normal((c, min(c, 64))).astype(np.float32)
        self.precision = (a @ a.T) / c + np.eye(c, dtype=np.float32)
        self.mu = rng.standard_normal((classes, c)).astype(np.float32)
        self.mu_quad = ((self.mu @ self.precision) * self.mu).sum(axis=1)
        # gram bands around the typical power-1 row sum
        row_typical = float(h * w)
        lo = row_typical - np.abs(rng.normal(2.0, 0.5, size=c))
        hi = row_typical + np.abs(rng.normal(2.0, 0.5, size=c))
        self.band_lo = lo
        self.band_hi = hi
        self.denom_lo = np.where(lo == 0.0, 1.0, np.abs(lo))
        self.denom_hi = np.where(hi == 0.0, 1.0, np.abs(hi))


def _make_runner(statistic: str, st: _LayerState):
    c = st.shape[0]
    if statistic == "max-simes-fisher":
        x, tables, grid, floor = st.x, st.tables, st.grid, st.floor
        ranks, lvals, lgrid = st.ranks, st.layer_values, st.layer_percentiles
        lfloor = 1.0 / (lvals.size + 1.0)

        def run() -> float:
            s = x.reshape(c, -1).max(axis=1)
            queries = s[:, None]
            counts_le = np.sum(tables <= queries, axis=1)
            counts_lt = np.sum(tables < queries, axis=1)
            left = np.where(counts_le > 0, grid[np.maximum(counts_le - 1, 0)], floor)
            n1 = grid.size + 1.0
            c_prev = np.rint(grid[np.maximum(counts_lt - 1, 0)] * n1) - 1.0
            right = np.where(
                counts_lt > 0, np.clip((n1 - c_prev) / n1, floor, 1.0), 1.0
            )
            p = np.minimum(1.0, 2.0 * np.minimum(left, right))
            p.sort()
            t = -np.min(p * (c / ranks))
            j = np.searchsorted(lvals, t, side="right")
            return float(lgrid[j - 1]) if j else lfloor

    elif statistic == "mahalanobis":
        x, prec, mu, mu_quad = st.x, st.precision, st.mu, st.mu_quad

        def run() -> float:
            v = x.reshape(c, -1).mean(axis=1)
            pv = prec @ v
            d = (v @ pv) - 2.0 * (mu @ pv) + mu_quad
            return float(d.min())

    elif statistic == "gram":
        x = st.x
        lo, hi, dlo, dhi = st.band_lo, st.band_hi, st.denom_lo, st.denom_hi

        def run() -> float:
            phi = x.reshape(c, -1)
            row = (phi @ phi.T).sum(axis=1)
            dev = np.where(row < lo, (lo - row) / dlo, np.where(row > hi, (row - hi) / dhi, 0.0))
            return float(dev.sum())

    elif statistic == "gram-factored":
        x = st.x
        lo, hi, dlo, dhi = st.band_lo, st.band_hi, st.denom_lo, st.denom_hi

        def run() -> float:
            phi = x.reshape(c, -1)
            row = phi @ phi.sum(axis=0)
            dev = np.where(row < lo, (lo - row) / dlo, np.where(row > hi, (row - hi) / dhi, 0.0))
            return float(dev.sum())

    else:

        def run() -> float:
            return 0.0

    return run


def run_bench(spec: BenchSpec = None) -> list[StatisticTiming]:
    """Round-robin timing over all shapes; returns one row per statistic."""
    spec = spec or BenchSpec()
    n_layers = len(spec.shapes)
    rounds = math.ceil(spec.measured / n_layers)
    warm_rounds = math.ceil(spec.warmup / n_layers) if spec.warmup else 0
    rng = np.random.default_rng([int(spec.seed), 11])
    states = [
        _LayerState(s, spec.classes, spec.channel_grid, spec.layer_grid, rng)
        for s in spec.shapes
    ]

    results = []
    set_id = shape_set_id(spec.shapes)
    for statistic in spec.statistics:
        runners = [_make_runner(statistic, st) for st in states]
        for _ in range(warm_rounds):
            for f in runners:
                f()
        times = np.empty((rounds, n_layers))
        checksum = 0.0
        clock = time.perf_counter_ns
        for r in range(rounds):
            row = times[r]
            for i, f in enumerate(runners):
                t0 = clock()
                out = f()
                row[i] = clock() - t0
                checksum += out
        times *= 1e-6
        totals = times.sum(axis=1)
        results.append(
            StatisticTiming(
                statistic=statistic,
                shape_set=set_id,
                executions=rounds * n_layers,
                rounds=rounds,
                single_mean_ms=float(times.mean()),
                single_sd_ms=float(times.std(ddof=1)) if times.size > 1 else 0.0,
                total_mean_ms=float(totals.mean()),
                total_sd_ms=float(totals.std(ddof=1)) if totals.size > 1 else 0.0,
                layer_means_ms=times.mean(axis=0),
                checksum=float(checksum),
            )
        )
    return results


_CSV_FIELDS = (
    "statistic",
    "shape_set",
    "executions",
    "rounds",
    "single_mean_ms",
    "single_sd_ms",
    "total_mean_ms",
    "total_sd_ms",
    "checksum",
)


def write_bench_csv(results: list[StatisticTiming], path) -> None:
    """Delimited report; an empty result list writes only the header."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_CSV_FIELDS)
        for r in results:
            writer.writerow(
                [
                    r.statistic,
                    r.shape_set,
                    r.executions,
                    r.rounds,
                    repr(r.single_mean_ms),
                    repr(r.single_sd_ms),
                    repr(r.total_mean_ms),
                    repr(r.total_sd_ms),
                    repr(r.checksum),
                ]
            )


def read_bench_csv(path) -> list[StatisticTiming]:
    """Parse a report back; per-layer means are not serialized."""
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != _CSV_FIELDS:
            raise OutOfRange(f"{path}: unexpected bench report header")
        for row in reader:
            out.append(
                StatisticTiming(
                    statistic=row["statistic"],
                    shape_set=row["shape_set"],
                    executions=int(row["executions"]),
                    rounds=int(row["rounds"]),
                    single_mean_ms=float(row["single_mean_ms"]),
                    single_sd_ms=float(row["single_sd_ms"]),
                    total_mean_ms=float(row["total_mean_ms"]),
                    total_sd_ms=float(row["total_sd_ms"]),
                    layer_means_ms=np.empty(0),
                    checksum=float(row["checksum"]),
                )
            )
    return out
