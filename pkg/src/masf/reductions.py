"""Spatial and channel reduction statistics, and the scheme strings naming them.

A scheme string is "<spatial>-<channel>-<layer>":

    spatial  max | mean | gramp1 | maxdev | gramp1dev
    channel  simes | fisher | sum | mahalanobisLDA | mahalanobisGDA
    layer    fisher | simes

"gramp1" is the power-1 Gram row sum, computed in factored form
phi @ (phi.T @ 1) without materializing the Gram matrix.  The *dev variants
pass the spatial statistic through a per-channel band deviation against
calibrated (q05, q95) quantiles before a plain channel summation.

Each channel reduction carries an orientation: +1 when larger outputs mean
more anomalous (fisher, sum, mahalanobis), -1 when smaller do (simes).  The
pipeline multiplies by the orientation so every calibrated layer statistic
is right-tailed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    ArityMismatch,
    DegenerateCovariance,
    DimensionMismatch,
    UnknownScheme,
)
from .stats import fisher_rows, simes_rows

__all__ = [
    "SPATIAL_TAGS",
    "CHANNEL_TAGS",
    "LAYER_TAGS",
    "SchemeSpec",
    "parse_scheme",
    "spatial_max",
    "spatial_mean",
    "gram_p1_rowsum",
    "band_deviation",
    "mahalanobis_sq",
    "fit_lda",
    "fit_gda",
    "combine_rows",
    "channel_orientation",
]

SPATIAL_TAGS = ("max", "mean", "gramp1", "maxdev", "gramp1dev")
CHANNEL_TAGS = ("simes", "fisher", "sum", "mahalanobislda", "mahalanobisgda")
LAYER_TAGS = ("fisher", "simes")

_CANONICAL_CHANNEL = {
    "simes": "simes",
    "fisher": "fisher",
    "sum": "sum",
    "mahalanobislda": "mahalanobisLDA",
    "mahalanobisgda": "mahalanobisGDA",
}

# Channel reductions that consume per-channel two-sided p-values.
PVALUE_CHANNELS = ("simes", "fisher")


@dataclass(frozen=True)
class SchemeSpec:
    """Parsed scheme triple; tags are canonical lowercase except Mahalanobis."""

    spatial: str
    channel: str
    layer: str

    @property
    def name(self) -> str:
        return f"{self.spatial}-{self.channel}-{self.layer}"

    @property
    def uses_channel_pvalues(self) -> bool:
        return self.channel in PVALUE_CHANNELS

    @property
    def uses_band_deviation(self) -> bool:
        return self.spatial.endswith("dev")

    @property
    def uses_mahalanobis(self) -> bool:
        return self.channel.startswith("mahalanobis")

    @property
    def base_spatial(self) -> str:
        """Spatial statistic before any band-deviation post-step."""
        return self.spatial[:-3] if self.uses_band_deviation else self.spatial


def parse_scheme(text: str) -> SchemeSpec:
    """Parse and validate a scheme string (case-insensitive)."""
    parts = text.strip().lower().split("-")
    if len(parts) != 3:
        raise UnknownScheme(f"scheme {text!r} must be spatial-channel-layer")
    spatial, channel, layer = parts
    if spatial not in SPATIAL_TAGS:
        raise UnknownScheme(f"unknown spatial reduction {spatial!r}")
    if channel not in CHANNEL_TAGS:
        raise UnknownScheme(f"unknown channel reduction {channel!r}")
    if layer not in LAYER_TAGS:
        raise UnknownScheme(f"unknown layer reduction {layer!r}")
    spec = SchemeSpec(spatial, _CANONICAL_CHANNEL[channel], layer)
    if spec.uses_band_deviation and spec.channel != "sum":
        raise UnknownScheme(f"{spec.name}: band-deviation spatials require the sum channel")
    if spec.uses_mahalanobis and spec.base_spatial != "mean":
        raise UnknownScheme(f"{spec.name}: mahalanobis channels require the mean spatial")
    if spec.channel == "sum" and not (spec.uses_band_deviation or spec.base_spatial == "gramp1"):
        raise UnknownScheme(f"{spec.name}: sum channel requires a deviation or gram spatial")
    return spec


def spatial_max(maps: np.ndarray) -> np.ndarray:
    """Per-channel spatial maximum; maps shape (..., c, h, w) -> (..., c)."""
    return np.max(maps, axis=(-2, -1))


def spatial_mean(maps: np.ndarray) -> np.ndarray:
    """Per-channel spatial mean; maps shape (..., c, h, w) -> (..., c)."""
    return np.mean(maps, axis=(-2, -1))


def gram_p1_rowsum(maps: np.ndarray) -> np.ndarray:
    """Row sums of the power-1 Gram matrix of the flattened maps.

    For phi of shape (c, h*w) this is G @ 1 with G = phi @ phi.T, computed
    as phi @ (phi.T @ 1) in O(c*h*w) time and O(c + h*w) extra space.
    """
    arr = np.asarray(maps, dtype=np.float64)
    if arr.ndim == 3:
        phi = arr.reshape(arr.shape[0], -1)
        return phi @ phi.sum(axis=0)
    if arr.ndim == 4:
        phi = arr.reshape(arr.shape[0], arr.shape[1], -1)
        return np.einsum("bck,bk->bc", phi, phi.sum(axis=1))
    raise ArityMismatch(f"gram_p1_rowsum expects rank 3 or 4 maps, got rank {arr.ndim}")


def band_deviation(q_low, q_high, value) -> np.ndarray:
    """Relative deviation of ``value`` outside the [q_low, q_high] band.

    Zero inside the band; (q_low - v) / |q_low| below it and
    (v - q_high) / |q_high| above it, with a denominator of 1 whenever the
    bounding quantile is exactly zero.  Broadcasts elementwise.
    """
    lo = np.asarray(q_low, dtype=np.float64)
    hi = np.asarray(q_high, dtype=np.float64)
    v = np.asarray(value, dtype=np.float64)
    lo_den = np.where(lo == 0.0, 1.0, np.abs(lo))
    hi_den = np.where(hi == 0.0, 1.0, np.abs(hi))
    below = (lo - v) / lo_den
    above = (v - hi) / hi_den
    out = np.where(v < lo, below, np.where(v > hi, above, 0.0))
    return out if out.ndim else float(out)


def mahalanobis_sq(x: np.ndarray, mean: np.ndarray, precision: np.ndarray):
    """Squared Mahalanobis distance(s) of row vector(s) x from ``mean``."""
    x = np.asarray(x, dtype=np.float64)
    mean = np.asarray(mean, dtype=np.float64)
    if x.shape[-1] != mean.shape[-1] or precision.shape != (mean.size, mean.size):
        raise DimensionMismatch("x, mean and precision dimensions disagree")
    d = x - mean
    if d.ndim == 1:
        return float(d @ precision @ d)
    return np.einsum("bi,ij,bj->b", d, precision, d)


def _ridged_precision(cov: np.ndarray, ridge: float | None) -> np.ndarray:
    d = cov.shape[0]
    eps = ridge if ridge is not None else 1e-6 * np.trace(cov) / d
    if eps <= 0.0:
        eps = 1e-12
    cov = cov + eps * np.eye(d)
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise DegenerateCovariance("covariance not positive definite after ridging") from exc
    ident = np.eye(d)
    inv_chol = np.linalg.solve(chol, ident)
    return inv_chol.T @ inv_chol


def fit_lda(class_vectors: dict[int, np.ndarray], ridge: float | None = None):
    """Per-class means with one pooled covariance (tied / LDA model).

    class_vectors maps class id -> (n_c, d) matrix.  Returns
    (means: {c: (d,)}, precision: (d, d)).  The pooled covariance uses the
    within-class scatter divided by the total sample count, plus a ridge of
    ridge (default 1e-6 * trace / d) on the diagonal.
    """
    if not class_vectors:
        raise DimensionMismatch("fit_lda needs at least one class")
    dims = {v.shape[1] for v in class_vectors.values()}
    if len(dims) != 1:
        raise DimensionMismatch("all classes must share one vector dimension")
    d = dims.pop()
    total = sum(v.shape[0] for v in class_vectors.values())
    if total <= d:
        raise DegenerateCovariance(
            f"pooled covariance needs more samples ({total}) than dimensions ({d})"
        )
    means = {}
    scatter = np.zeros((d, d))
    for c, v in class_vectors.items():
        mu = v.mean(axis=0)
        means[c] = mu
        centered = v - mu
        scatter += centered.T @ centered
    return means, _ridged_precision(scatter / total, ridge)


def fit_gda(class_vectors: dict[int, np.ndarray], ridge: float | None = None):
    """Per-class means and per-class precisions (unpooled / GDA model)."""
    if not class_vectors:
        raise DimensionMismatch("fit_gda needs at least one class")
    means, precisions = {}, {}
    for c, v in class_vectors.items():
        d = v.shape[1]
        if v.shape[0] <= d:
            raise DegenerateCovariance(
                f"class {c}: covariance needs more samples ({v.shape[0]}) than dims ({d})"
            )
        mu = v.mean(axis=0)
        centered = v - mu
        means[c] = mu
        precisions[c] = _ridged_precision(centered.T @ centered / v.shape[0], ridge)
    return means, precisions


def channel_orientation(channel: str) -> int:
    """+1 if larger channel-reduction outputs are more anomalous, else -1."""
    return -1 if channel == "simes" else 1


def combine_rows(channel: str, rows: np.ndarray) -> np.ndarray:
    """Apply a p-value channel reduction to each row of an (n, m) matrix."""
    if channel == "simes":
        return simes_rows(rows)
    if channel == "fisher":
        return fisher_rows(rows)
    if channel == "sum":
        return np.sum(rows, axis=1)
    raise UnknownScheme(f"combine_rows cannot apply channel reduction {channel!r}")
