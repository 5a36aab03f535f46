"""Detection metrics, uniformity checks and benchmark aggregation.

Scores here are p-values: smaller means more anomalous, and a detector
rejects when the score falls strictly below a threshold.  Threshold search
is conservative under ties: it returns the largest threshold whose in-
distribution rejection rate stays within the allowed budget.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.special import kolmogorov
from scipy.stats import rankdata

from .errors import EmptyScores, LengthMismatch, OutOfRange, TooFewSamples

__all__ = [
    "ScoreSet",
    "tnr_threshold",
    "tpr_at_tnr",
    "auroc",
    "aggregate",
    "ks_uniformity",
    "qq_rows",
    "qq_export",
    "evaluate_scores",
    "split_for_validation",
    "write_metrics_csv",
]


@dataclass
class ScoreSet:
    """Paired in-distribution and out-of-distribution score samples.

    Scores are detection p-values on [0, 1]; the eCDF floor keeps real
    detector output strictly positive, but degenerate zeros are accepted
    so perfectly-separated corner cases stay expressible.
    """

    in_scores: np.ndarray
    out_scores: np.ndarray
    label: str = ""

    def __post_init__(self) -> None:
        self.in_scores = _check_scores(self.in_scores, "in_scores", unit=True)
        self.out_scores = _check_scores(self.out_scores, "out_scores", unit=True)


def _check_scores(values, name: str, unit: bool = False) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64).ravel()
    if arr.size == 0:
        raise EmptyScores(f"{name} must be non-empty")
    if not np.all(np.isfinite(arr)):
        raise OutOfRange(f"{name} must be finite")
    if unit and (arr.min() < 0.0 or arr.max() > 1.0):
        raise OutOfRange(f"{name} must lie in [0, 1]")
    return arr


def tnr_threshold(in_scores, tnr: float = 0.95) -> float:
    """Largest rejection threshold keeping in-distribution FPR <= 1 - tnr.

    Rejection is strict (score < threshold), so the threshold equals the
    (m+1)-th smallest in-distribution score with m = floor((1-tnr) * n);
    ties never push the realized FPR over budget.
    """
    scores = np.sort(_check_scores(in_scores, "in_scores"))
    if not 0.0 < tnr <= 1.0:
        raise OutOfRange("tnr must lie in (0, 1]")
    # round before flooring so (1 - 0.8) * 10 counts as 2, not 1.9999...
    budget = int(np.floor(round((1.0 - tnr) * scores.size, 9)))
    if budget >= scores.size:
        return np.inf
    return float(scores[budget])


def tpr_at_tnr(scores: ScoreSet, tnr: float = 0.95) -> float:
    """True-positive rate of the threshold test at a fixed TNR budget."""
    t = tnr_threshold(scores.in_scores, tnr)
    return float(np.mean(scores.out_scores < t))


def auroc(scores: ScoreSet) -> float:
    """P(random OOD score < random in-distribution score), ties count half."""
    ins, outs = scores.in_scores, scores.out_scores
    ranks = rankdata(np.concatenate([ins, outs]))
    u = ranks[: ins.size].sum() - ins.size * (ins.size + 1) / 2.0
    return float(u / (ins.size * outs.size))


def aggregate(values) -> tuple[float, float, float]:
    """(mean, SD, min) across benchmark scenarios.

    SD is the sample standard deviation (n - 1 denominator, matching how
    published multi-scenario tables report spread); it is 0.0 for a single
    scenario.
    """
    arr = _check_scores(values, "values")
    sd = float(np.std(arr, ddof=1)) if arr.size > 1 else 0.0
    return float(np.mean(arr)), sd, float(np.min(arr))


def ks_uniformity(pvalues, min_samples: int = 20) -> tuple[float, float]:
    """One-sample KS distance against Uniform[0, 1] and its asymptotic p-value."""
    arr = np.sort(_check_scores(pvalues, "pvalues"))
    if arr.size < min_samples:
        raise TooFewSamples(f"ks_uniformity needs at least {min_samples} samples")
    if arr[0] < 0.0 or arr[-1] > 1.0:
        raise OutOfRange("pvalues must lie in [0, 1]")
    n = arr.size
    grid = np.arange(1, n + 1) / n
    d_plus = np.max(grid - arr)
    d_minus = np.max(arr - (grid - 1.0 / n))
    d = float(max(d_plus, d_minus))
    return d, float(kolmogorov(np.sqrt(n) * d))


def qq_rows(pvalues, resolution: float = 1e-3) -> np.ndarray:
    """(uniform quantile, empirical quantile) pairs on a regular grid."""
    arr = _check_scores(pvalues, "pvalues")
    if not 0.0 < resolution < 0.5:
        raise OutOfRange("resolution must lie in (0, 0.5)")
    steps = int(round(1.0 / resolution)) - 1
    grid = (np.arange(1, steps + 1)) * resolution
    return np.column_stack([grid, np.quantile(arr, grid)])


def qq_export(pvalues, path, resolution: float = 1e-3) -> np.ndarray:
    """Write the QQ grid as CSV (columns uniform,empirical) and return it."""
    rows = qq_rows(pvalues, resolution)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["uniform", "empirical"])
        for u, e in rows:
            writer.writerow([f"{float(u):.6f}", repr(float(e))])
    return rows


def evaluate_scores(scores: ScoreSet, tnr: float = 0.95) -> dict:
    """Standard detection metrics for one in/out score pairing."""
    return {
        "label": scores.label,
        "n_in": int(scores.in_scores.size),
        "n_out": int(scores.out_scores.size),
        "tnr": float(tnr),
        "threshold": tnr_threshold(scores.in_scores, tnr),
        "tpr": tpr_at_tnr(scores, tnr),
        "auroc": auroc(scores),
    }


def split_for_validation(manifest, test_fraction: float = 0.1):
    """Per-class head/tail split into a calibration part and a held-out part.

    The held-out part takes the last ceil(test_fraction * n_c) samples of
    each class in manifest order; the rest stay for calibration.
    """
    if not 0.0 < test_fraction < 1.0:
        raise OutOfRange("test_fraction must lie in (0, 1)")
    cal_ids, test_ids = [], []
    by_class = manifest.by_class()
    if not by_class:
        raise EmptyScores("manifest has no labeled samples")
    for _, entries in sorted(by_class.items()):
        n_test = int(np.ceil(test_fraction * len(entries)))
        if n_test >= len(entries):
            raise LengthMismatch("test fraction leaves no calibration samples")
        cal_ids.extend(e.id for e in entries[: len(entries) - n_test])
        test_ids.extend(e.id for e in entries[len(entries) - n_test :])
    return manifest.subset(cal_ids), manifest.subset(test_ids)


def write_metrics_csv(rows: list[dict], path) -> None:
    """Write evaluate_scores dicts as a delimited report."""
    if not rows:
        raise EmptyScores("no metric rows to write")
    fields = list(rows[0].keys())
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            writer.writerow(
                {k: (repr(float(v)) if isinstance(v, float) else v) for k, v in row.items()}
            )
