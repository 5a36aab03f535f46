"""Empirical-CDF p-values and classical p-value combination tests.

All combiners accept one-dimensional sequences of p-values in (0, 1] and are
deterministic, pure functions.  Empirical CDF values follow the add-one
convention (count + 1) / (n + 1) so that no tail probability is ever zero;
the smallest value an n-sample eCDF can emit is 1 / (n + 1).
"""

from __future__ import annotations

import numpy as np
from scipy.special import gammaincc

from .errors import EmptySample, EmptyVector, OutOfRange, ZeroPValue

__all__ = [
    "ecdf_value",
    "two_sided_pvalue",
    "simes",
    "fisher",
    "bonferroni",
    "chi_square_sf",
]


def _as_pvector(q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    if q.ndim != 1 or q.size == 0:
        raise EmptyVector("expected a non-empty 1-d vector of p-values")
    if np.any(q <= 0.0):
        raise ZeroPValue("p-values must be strictly positive")
    if np.any(q > 1.0) or not np.all(np.isfinite(q)):
        raise OutOfRange("p-values must lie in (0, 1]")
    return q


def ecdf_value(x: float, sorted_sample: np.ndarray) -> float:
    """Add-one empirical CDF of ``x`` against an ascending sample.

    Returns (#{s <= x} + 1) / (n + 1).  Ties count via '<=' exactly, so the
    result is never 0 and never below 1 / (n + 1).
    """
    sample = np.asarray(sorted_sample)
    if sample.size == 0:
        raise EmptySample("ecdf_value needs at least one calibration value")
    if not np.isfinite(x):
        raise OutOfRange("ecdf_value requires a finite query point")
    count = int(np.searchsorted(sample, x, side="right"))
    return (count + 1) / (sample.size + 1)


def two_sided_pvalue(right_tail: float, left_tail: float) -> float:
    """Two-sided p-value from a pair of tail probabilities.

    Computes min(1, 2 * min(right_tail, left_tail)) with the factor 2
    accounting for testing both directions; capped at 1 so the result stays
    a valid p-value.
    """
    if not (0.0 < right_tail <= 1.0 and 0.0 < left_tail <= 1.0):
        raise OutOfRange("tail probabilities must lie in (0, 1]")
    return min(1.0, 2.0 * min(right_tail, left_tail))


def simes(pvalues) -> float:
    """Simes combination: min over sorted p-values of q_(i) * m / i.

    Valid under independence and positive dependence; uniformly no larger
    than the Bonferroni combination on the same vector.
    """
    q = np.sort(_as_pvector(pvalues))
    m = q.size
    ranks = np.arange(1, m + 1, dtype=np.float64)
    return float(min(1.0, np.min(q * (m / ranks))))


def fisher(pvalues) -> float:
    """Fisher combination statistic: -2 * sum(log q_i).

    Returns the raw statistic, distributed chi-square with 2m degrees of
    freedom when the m inputs are independent uniforms.  Larger values mean
    stronger combined evidence.
    """
    q = _as_pvector(pvalues)
    return float(-2.0 * np.sum(np.log(q)))


def bonferroni(pvalues) -> float:
    """Bonferroni combination: min(1, m * min(q))."""
    q = _as_pvector(pvalues)
    return float(min(1.0, q.size * np.min(q)))


def chi_square_sf(x: float, dof: int) -> float:
    """Chi-square survival function P(X >= x) with ``dof`` degrees of freedom.

    Backed by the regularized upper incomplete gamma function; used as the
    reference null for Fisher-statistic validation.
    """
    if dof < 1 or dof != int(dof):
        raise OutOfRange("degrees of freedom must be a positive integer")
    if np.ndim(x) == 0:
        if not np.isfinite(x) or x < 0.0:
            raise OutOfRange("chi-square statistic must be finite and >= 0")
        return float(gammaincc(dof / 2.0, x / 2.0))
    xs = np.asarray(x, dtype=np.float64)
    if np.any(~np.isfinite(xs)) or np.any(xs < 0.0):
        raise OutOfRange("chi-square statistic must be finite and >= 0")
    return gammaincc(dof / 2.0, xs / 2.0)


def simes_rows(q: np.ndarray) -> np.ndarray:
    """Row-wise Simes combination over a (n, m) matrix of p-values."""
    q = np.asarray(q, dtype=np.float64)
    m = q.shape[1]
    ranks = np.arange(1, m + 1, dtype=np.float64)
    out = np.min(np.sort(q, axis=1) * (m / ranks), axis=1)
    return np.minimum(1.0, out)


def fisher_rows(q: np.ndarray) -> np.ndarray:
    """Row-wise Fisher statistic over a (n, m) matrix of p-values."""
    q = np.asarray(q, dtype=np.float64)
    return -2.0 * np.sum(np.log(q), axis=1)
