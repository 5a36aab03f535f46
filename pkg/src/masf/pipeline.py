"""Calibrate-then-score detector built on hierarchical eCDF testing.

Calibration runs two phases over labeled feature-map manifests:

  Phase 1 (per class, per layer) estimates the per-channel distribution of
  the spatial statistic: quantile tables for p-value channel reductions,
  (q05, q95) bands for deviation schemes, or Gaussian parameters for
  Mahalanobis channel reductions.

  Phase 2 freezes phase 1, streams the second part of the split, and
  calibrates the empirical distribution of each layer's channel-reduction
  statistic, then of the cross-layer combination statistic.

Split modes: "reuse" feeds every calibration sample to both phases;
"disjoint" gives each phase its own half (exact-validity regime, at twice
the data cost).

Scoring maps a fresh record through the frozen tables: per-channel
two-sided p-values, channel reduction, per-layer right-tail p-value, layer
reduction, final right-tail p-value.  Reductions whose small outputs mean
anomalous (Simes) are negated before table calibration so that every
calibrated statistic is right-tailed.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from ._version import __version__ as _engine_version
from .errors import (
    InsufficientSamples,
    MissingLabels,
    OutOfRange,
    ShapeMismatch,
    UncalibratedClass,
)
from .quantiles import (
    LAYER_BODY_PERCENTILES,
    ArrayQuantileTracker,
    QuantileTable,
    TableBank,
    TrackerConfig,
)
from .reductions import (
    SchemeSpec,
    band_deviation,
    channel_orientation,
    combine_rows,
    fit_gda,
    fit_lda,
    gram_p1_rowsum,
    mahalanobis_sq,
    parse_scheme,
    spatial_max,
    spatial_mean,
)
from .stats import fisher_rows, simes_rows
from .tensor_io import FeatureRecord, LayerSpec, Manifest, stream_records

__all__ = [
    "SPLIT_MODES",
    "CalibratedDetector",
    "DetectionReport",
    "Scorer",
    "adjusted_alpha_bound",
    "calibrate",
    "sample_channels",
    "score",
    "score_all_classes",
]

SPLIT_MODES = ("reuse", "disjoint")
_SCORE_CHUNK = 256


def adjusted_alpha_bound(alpha: float, accuracy: float) -> float:
    """Type-I-error bound when testing only the predicted class's p-value.

    Rejecting when the predicted-class p-value is <= alpha keeps the false
    alarm rate at most alpha * accuracy + (1 - accuracy).
    """
    if not 0.0 <= alpha <= 1.0:
        raise OutOfRange("alpha must lie in [0, 1]")
    if not 0.0 <= accuracy <= 1.0:
        raise OutOfRange("accuracy must lie in [0, 1]")
    return alpha * accuracy + (1.0 - accuracy)


def sample_channels(layers: Iterable[LayerSpec], rate: float, seed: int) -> dict[int, np.ndarray]:
    """Choose ceil(rate * channels) distinct channels per layer.

    The draw is deterministic per (seed, layer id), so adding or removing
    layers never reshuffles the others.  rate = 1 monitors every channel.
    """
    if not 0.0 < rate <= 1.0:
        raise OutOfRange("sampling rate must lie in (0, 1]")
    masks = {}
    for spec in layers:
        count = int(np.ceil(rate * spec.channels))
        if rate >= 1.0 or count >= spec.channels:
            masks[spec.id] = np.arange(spec.channels)
            continue
        rng = np.random.default_rng([seed, spec.id])
        masks[spec.id] = np.sort(rng.choice(spec.channels, size=count, replace=False))
    return masks


@dataclass
class CalibratedDetector:
    """Frozen calibration artifact: scheme, masks and every eCDF table."""

    scheme: SchemeSpec
    layers: list[LayerSpec]  # monitored layers, manifest order
    masks: dict[int, np.ndarray]
    class_ids: tuple[int, ...]
    layer_tables: dict[tuple[int, int], QuantileTable]
    final_tables: dict[int, QuantileTable]
    channel_banks: dict[tuple[int, int], TableBank] = field(default_factory=dict)
    dev_bands: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)
    mahal_means: dict[tuple[int, int], np.ndarray] = field(default_factory=dict)
    mahal_precisions: dict = field(default_factory=dict)  # layer id or (c, layer id) -> matrix
    meta: dict = field(default_factory=dict)

    def layer_bank(self, class_id: int) -> TableBank:
        return TableBank.from_tables(
            [self.layer_tables[(class_id, l.id)] for l in self.layers]
        )

    def precision_for(self, class_id: int, layer_id: int) -> np.ndarray:
        if self.scheme.channel == "mahalanobisGDA":
            return self.mahal_precisions[(class_id, layer_id)]
        return self.mahal_precisions[layer_id]


@dataclass
class DetectionReport:
    """Per-sample scoring outcome across every calibrated class."""

    sample_id: str
    pvalues: dict[int, float]
    q_max: float
    alpha: float
    reject_max: bool
    y_hat: int | None = None
    q_predicted: float | None = None
    reject_predicted: bool | None = None
    t1e_bound: float | None = None


def _spatial_rows(tag: str, maps: np.ndarray) -> np.ndarray:
    if tag == "max":
        return spatial_max(maps)
    if tag == "mean":
        return spatial_mean(maps)
    return gram_p1_rowsum(maps)


class Scorer:
    """Maps manifest-ordered records through a calibrated detector.

    Precomputes the positions of the detector's monitored layers inside the
    records' layer list, so it must be built against the manifest whose
    records it will score.
    """

    def __init__(self, detector: CalibratedDetector, manifest_layers: list[LayerSpec]) -> None:
        self.detector = detector
        pos_by_id = {spec.id: i for i, spec in enumerate(manifest_layers)}
        self.positions = []
        for spec in detector.layers:
            if spec.id not in pos_by_id:
                raise ShapeMismatch(f"manifest lacks monitored layer {spec.id}")
            got = manifest_layers[pos_by_id[spec.id]]
            if got.shape != spec.shape:
                raise ShapeMismatch(
                    f"layer {spec.id}: manifest shape {got.shape} != calibrated {spec.shape}"
                )
            self.positions.append(pos_by_id[spec.id])

    def _gather(self, records: list[FeatureRecord]) -> list[np.ndarray]:
        """Stack each monitored layer's masked maps into a (B, m, h, w) array."""
        det = self.detector
        out = []
        for spec, pos in zip(det.layers, self.positions):
            mask = det.masks[spec.id]
            chunk = np.empty((len(records), mask.size, spec.height, spec.width), dtype=np.float64)
            for i, rec in enumerate(records):
                if len(rec.layers) <= pos or rec.layers[pos].shape != spec.shape:
                    raise ShapeMismatch(f"record {rec.sample_id}: layer {spec.id} shape mismatch")
                chunk[i] = rec.layers[pos][mask]
            out.append(chunk)
        return out

    def base_stats(self, records: list[FeatureRecord]) -> list[np.ndarray]:
        """Class-independent per-layer spatial statistics, each (B, m)."""
        tag = self.detector.scheme.base_spatial
        return [_spatial_rows(tag, chunk) for chunk in self._gather(records)]

    def layer_statistics(self, stats: list[np.ndarray], class_id: int) -> np.ndarray:
        """Oriented channel-reduction statistic per layer, shape (B, L)."""
        det = self.detector
        scheme = det.scheme
        cols = []
        for spec, s in zip(det.layers, stats):
            key = (class_id, spec.id)
            if scheme.uses_channel_pvalues:
                right, left = det.channel_banks[key].tails(s)
                q = np.minimum(1.0, 2.0 * np.minimum(left, right))
                t = combine_rows(scheme.channel, q)
                cols.append(channel_orientation(scheme.channel) * t)
            elif scheme.uses_band_deviation:
                lo, hi = det.dev_bands[key]
                cols.append(band_deviation(lo, hi, s).sum(axis=1))
            elif scheme.uses_mahalanobis:
                mu = det.mahal_means[key]
                prec = det.precision_for(class_id, spec.id)
                cols.append(mahalanobis_sq(s, mu, prec))
            else:  # plain gram row sum with channel summation
                cols.append(s.sum(axis=1))
        return np.column_stack(cols)

    def final_statistics(self, u: np.ndarray, class_id: int) -> np.ndarray:
        """Oriented cross-layer combination statistic, shape (B,)."""
        det = self.detector
        bank = det.layer_bank(class_id)
        layer_p = bank.tails(u)[0]
        if det.scheme.layer == "fisher":
            return fisher_rows(layer_p)
        return -simes_rows(layer_p)

    def class_pvalues(self, records: list[FeatureRecord], class_id: int) -> np.ndarray:
        if class_id not in self.detector.class_ids:
            raise UncalibratedClass(class_id)
        stats = self.base_stats(records)
        return self._class_pvalues_from_stats(stats, class_id)

    def _class_pvalues_from_stats(self, stats: list[np.ndarray], class_id: int) -> np.ndarray:
        u = self.layer_statistics(stats, class_id)
        t = self.final_statistics(u, class_id)
        table = self.detector.final_tables[class_id]
        return table.right_tail(t)

    def score_chunk(self, records: list[FeatureRecord]) -> np.ndarray:
        """P-value matrix (B, k) over the detector's calibrated classes."""
        stats = self.base_stats(records)
        return np.column_stack(
            [self._class_pvalues_from_stats(stats, c) for c in self.detector.class_ids]
        )

    def reports(
        self,
        records: list[FeatureRecord],
        alpha: float = 0.05,
        accuracy: float | None = None,
    ) -> list[DetectionReport]:
        qs = self.score_chunk(records)
        bound = None if accuracy is None else adjusted_alpha_bound(alpha, accuracy)
        out = []
        for row, rec in zip(qs, records):
            pvals = {c: float(p) for c, p in zip(self.detector.class_ids, row)}
            q_max = float(np.max(row))
            q_pred = None if rec.y_hat is None else pvals.get(rec.y_hat)
            out.append(
                DetectionReport(
                    sample_id=rec.sample_id,
                    pvalues=pvals,
                    q_max=q_max,
                    alpha=alpha,
                    reject_max=q_max <= alpha,
                    y_hat=rec.y_hat,
                    q_predicted=q_pred,
                    reject_predicted=None if q_pred is None else q_pred <= alpha,
                    t1e_bound=bound,
                )
            )
        return out


def score(detector: CalibratedDetector, record: FeatureRecord, class_id: int) -> float:
    """Class-conditional p-value of one record (smaller = more anomalous)."""
    scorer = Scorer(detector, detector.layers)
    return float(scorer.class_pvalues([record], class_id)[0])


def score_all_classes(
    detector: CalibratedDetector,
    record: FeatureRecord,
    alpha: float = 0.05,
    accuracy: float | None = None,
) -> DetectionReport:
    scorer = Scorer(detector, detector.layers)
    return scorer.reports([record], alpha=alpha, accuracy=accuracy)[0]


def _chunks(seq, size):
    for i in range(0, len(seq), size):
        yield seq[i : i + size]


class _BatchFeeder:
    """Greedily slices a row stream into tracker batches of one fixed size."""

    def __init__(self, tracker: ArrayQuantileTracker) -> None:
        self.tracker = tracker
        self.pending: list[np.ndarray] = []
        self.rows = 0

    def push(self, rows: np.ndarray) -> None:
        self.pending.append(rows)
        self.rows += rows.shape[0]
        if self.rows >= self.tracker.config.batch_size:
            buf = np.concatenate(self.pending, axis=0)
            size = self.tracker.config.batch_size
            full = buf.shape[0] // size
            for i in range(full):
                self.tracker.observe_batch(buf[i * size : (i + 1) * size])
            rest = buf[full * size :]
            self.pending = [rest] if rest.shape[0] else []
            self.rows = rest.shape[0] if rest.shape[0] else 0

    def flush(self) -> None:
        if self.rows:
            self.tracker.observe_batch(np.concatenate(self.pending, axis=0))
            self.pending, self.rows = [], 0


def _split_classes(manifest: Manifest, split_mode: str, min_batch: int):
    """Per-class (phase1, phase2) sample-entry lists under the split mode."""
    by_class = manifest.by_class()
    labeled = sum(len(v) for v in by_class.values())
    if labeled != len(manifest.samples):
        raise MissingLabels("every calibration sample must carry a true label")
    missing = [c for c in range(manifest.k) if c not in by_class]
    if missing:
        raise InsufficientSamples(f"no calibration samples for classes {missing}")
    need = min_batch if split_mode == "reuse" else 2 * min_batch
    splits = {}
    for c, entries in sorted(by_class.items()):
        if len(entries) < need:
            raise InsufficientSamples(
                f"class {c}: {len(entries)} samples < required {need} for split '{split_mode}'"
            )
        if split_mode == "reuse":
            splits[c] = (entries, entries)
        else:
            half = (len(entries) + 1) // 2
            splits[c] = (entries[:half], entries[half:])
    return splits


def calibrate(
    manifest: Manifest,
    scheme,
    split_mode: str = "reuse",
    *,
    monitored_layers=None,
    sampling_rate: float = 1.0,
    seed: int = 0,
    tracker_config: TrackerConfig | None = None,
    layer_tracker_config: TrackerConfig | None = None,
    chunk_size: int = _SCORE_CHUNK,
    quiet: bool = True,
) -> CalibratedDetector:
    """Run two-phase calibration and return a frozen detector."""
    spec = parse_scheme(scheme) if isinstance(scheme, str) else scheme
    if split_mode not in SPLIT_MODES:
        raise OutOfRange(f"split_mode must be one of {SPLIT_MODES}")
    cfg = tracker_config or TrackerConfig()
    if spec.uses_band_deviation:
        cfg = cfg.with_extra_percentiles([0.05, 0.95])

    def _layer_cfg(n_rows: int) -> TrackerConfig:
        # Layer and final statistics are discrete (they are built from
        # finite p-value grids), and interpolated running-mean percentiles
        # of a discrete distribution land between its atoms with fractional
        # mass, which breaks the conservative step lookup.  Since phase 2
        # fits in memory anyway, keep exact tails over the whole split so
        # the table is a subsampled order-statistic grid with exact add-one
        # percentiles, at most ~1e-3 apart.
        if layer_tracker_config is not None:
            return layer_tracker_config
        k = n_rows // 2 + 1
        return TrackerConfig(
            batch_size=cfg.batch_size,
            body_percentiles=LAYER_BODY_PERCENTILES,
            tail_k=k,
            tail_grid=min(500, k),
            tail_mode="always",
        )

    if monitored_layers is None:
        layers = list(manifest.layers)
    else:
        wanted = list(monitored_layers)
        by_id = {l.id: l for l in manifest.layers}
        missing = [i for i in wanted if i not in by_id]
        if missing:
            raise ShapeMismatch(f"manifest lacks requested layers {missing}")
        layers = [l for l in manifest.layers if l.id in set(wanted)]
    if not layers:
        raise ShapeMismatch("no monitored layers")

    masks = sample_channels(layers, sampling_rate, seed)
    splits = _split_classes(manifest, split_mode, cfg.batch_size)
    class_ids = tuple(sorted(splits))

    detector = CalibratedDetector(
        scheme=spec,
        layers=layers,
        masks=masks,
        class_ids=class_ids,
        layer_tables={},
        final_tables={},
    )
    scorer = Scorer(detector, manifest.layers)

    def log(msg: str) -> None:
        if not quiet:
            print(msg, file=sys.stderr)

    # Phase 1: per-channel spatial-statistic distributions.  A plain sum
    # channel (gram row-sum schemes) has no per-channel parameters at all.
    needs_phase1 = (
        spec.uses_channel_pvalues or spec.uses_band_deviation or spec.uses_mahalanobis
    )
    mahal_vectors: dict[int, dict[int, np.ndarray]] = {}
    for c in class_ids if needs_phase1 else ():
        log(f"phase 1: class {c}")
        entries = splits[c][0]
        sub = manifest.subset(e.id for e in entries)
        if spec.uses_mahalanobis:
            collected: list[list[np.ndarray]] = [[] for _ in layers]
        else:
            feeders = [
                _BatchFeeder(ArrayQuantileTracker(cfg, streams=masks[l.id].size))
                for l in layers
            ]
        for batch in _chunks(list(stream_records(sub)), chunk_size):
            stats = scorer.base_stats(batch)
            for i in range(len(layers)):
                if spec.uses_mahalanobis:
                    collected[i].append(stats[i])
                else:
                    feeders[i].push(stats[i])
        if spec.uses_mahalanobis:
            for spec_l, cols in zip(layers, collected):
                mahal_vectors.setdefault(spec_l.id, {})[c] = np.concatenate(cols, axis=0)
        else:
            for spec_l, feeder in zip(layers, feeders):
                feeder.flush()
                bank = feeder.tracker.finalize_bank()
                if spec.uses_band_deviation:
                    detector.dev_bands[(c, spec_l.id)] = (
                        bank.quantile(0.05),
                        bank.quantile(0.95),
                    )
                else:
                    detector.channel_banks[(c, spec_l.id)] = bank

    if spec.uses_mahalanobis:
        for spec_l in layers:
            per_class = mahal_vectors[spec_l.id]
            if spec.channel == "mahalanobisGDA":
                means, precisions = fit_gda(per_class)
                for c in class_ids:
                    detector.mahal_means[(c, spec_l.id)] = means[c]
                    detector.mahal_precisions[(c, spec_l.id)] = precisions[c]
            else:
                means, precision = fit_lda(per_class)
                for c in class_ids:
                    detector.mahal_means[(c, spec_l.id)] = means[c]
                detector.mahal_precisions[spec_l.id] = precision

    # Phase 2: layer-statistic tables, then the final combination table.
    counts = {}
    for c in class_ids:
        log(f"phase 2: class {c}")
        entries = splits[c][1]
        sub = manifest.subset(e.id for e in entries)
        u_rows = []
        for batch in _chunks(list(stream_records(sub)), chunk_size):
            stats = scorer.base_stats(batch)
            u_rows.append(scorer.layer_statistics(stats, c))
        u = np.concatenate(u_rows, axis=0)
        layer_cfg = _layer_cfg(u.shape[0])

        layer_feeder = _BatchFeeder(ArrayQuantileTracker(layer_cfg, streams=len(layers)))
        layer_feeder.push(u)
        layer_feeder.flush()
        for spec_l, table in zip(layers, layer_feeder.tracker.finalize()):
            detector.layer_tables[(c, spec_l.id)] = table

        t_fin = scorer.final_statistics(u, c)
        final_feeder = _BatchFeeder(ArrayQuantileTracker(layer_cfg, streams=1))
        final_feeder.push(t_fin[:, None])
        final_feeder.flush()
        detector.final_tables[c] = final_feeder.tracker.finalize()[0]
        counts[c] = [len(splits[c][0]), len(splits[c][1])]

    detector.meta = {
        "dataset": manifest.dataset,
        "engine": _engine_version,
        "split_mode": split_mode,
        "sampling_rate": float(sampling_rate),
        "seed": int(seed),
        "counts": counts,
        "tracker": {
            "batch_size": cfg.batch_size,
            "body_percentiles": list(cfg.body_percentiles),
            "tail_k": cfg.tail_k,
            "tail_grid": cfg.tail_grid,
            "tail_mode": cfg.tail_mode,
        },
        "layer_tracker": (
            {
                "batch_size": layer_tracker_config.batch_size,
                "tail_k": layer_tracker_config.tail_k,
                "tail_grid": layer_tracker_config.tail_grid,
                "tail_mode": layer_tracker_config.tail_mode,
            }
            if layer_tracker_config is not None
            else {"policy": "exact-ecdf", "ranks_per_side": 500}
        ),
    }
    return detector
