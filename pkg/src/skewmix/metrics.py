"""Distances between densities or pmfs, cluster-count summaries and trace diagnostics."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.integrate import trapezoid

_F_FLOOR = 1e-300


@dataclass(frozen=True)
class DensityGrid:
    """Density values on an ascending grid."""

    points: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.points, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if p.ndim != 1 or p.shape != v.shape:
            raise ValueError("points and values must be 1-d arrays of equal length")
        if p.size > 1 and np.any(np.diff(p) <= 0):
            raise ValueError("points must be strictly increasing")
        if not np.all(np.isfinite(v)):
            raise ValueError("values must be finite")
        object.__setattr__(self, "points", p)
        object.__setattr__(self, "values", v)


def default_grid(data, n_points=2001, pad=4.0):
    """Equispaced grid over ``[min - pad*sd, max + pad*sd]``."""
    data = np.asarray(data, dtype=float)
    sd = float(np.std(data, ddof=1)) if data.size > 1 else 1.0
    sd = sd if sd > 0 else 1.0
    return np.linspace(data.min() - pad * sd, data.max() + pad * sd, n_points)


class InfiniteDivergenceWarning(RuntimeWarning):
    """``f`` puts mass where ``g`` is zero."""


def _pair(f, g):
    if isinstance(f, DensityGrid) != isinstance(g, DensityGrid):
        raise TypeError("compare two DensityGrids or two pmf vectors")
    if isinstance(f, DensityGrid):
        if f.points.shape != g.points.shape or not np.array_equal(f.points, g.points):
            raise ValueError("densities must share a grid")
        return f.values, g.values, f.points
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    if f.shape != g.shape:
        raise ValueError("pmfs must share a support")
    return f, g, None


def kl_divergence(f, g):
    """``KL(f, g)`` by the trapezoid rule on a grid, or an exact sum for pmfs.

    Points with ``f < 1e-300`` contribute nothing. If ``f > 0`` somewhere
    ``g`` vanishes the result is ``inf`` and an
    :class:`InfiniteDivergenceWarning` is issued.
    """
    fv, gv, x = _pair(f, g)
    live = fv >= _F_FLOOR
    if np.any(live & (gv <= 0)):
        warnings.warn("f > 0 where g = 0; KL is infinite", InfiniteDivergenceWarning, stacklevel=2)
        return math.inf
    integrand = np.zeros(fv.shape)
    integrand[live] = fv[live] * (np.log(fv[live]) - np.log(gv[live]))
    total = float(integrand.sum()) if x is None else float(trapezoid(integrand, x))
    return total


def l2_distance(f, g):
    """``(integral of (f - g)^2)^(1/2)`` on a grid, or the Euclidean norm for pmfs."""
    fv, gv, x = _pair(f, g)
    sq = (fv - gv) ** 2
    total = float(sq.sum()) if x is None else float(trapezoid(sq, x))
    return math.sqrt(max(total, 0.0))


@dataclass(frozen=True)
class ClusterPosterior:
    counts: np.ndarray  # support 0..max
    probs: np.ndarray
    mean: float

    def as_rows(self):
        return [(int(k), float(p)) for k, p in enumerate(self.probs) if p > 0]


def occupied_cluster_posterior(summary_or_counts):
    """Normalised histogram of occupied-cluster counts and its mean.

    Accepts a :class:`PosteriorSummary` (counts recomputed from stored
    allocations when available) or a plain vector of per-draw counts.
    """
    alloc = getattr(summary_or_counts, "alloc", None)
    if alloc is not None:
        k = np.array([np.unique(row).size for row in alloc])
    elif hasattr(summary_or_counts, "n_occupied"):
        k = np.asarray(summary_or_counts.n_occupied)
    else:
        k = np.asarray(summary_or_counts)
    k = k.astype(np.int64)
    if k.size == 0:
        raise ValueError("no draws")
    counts = np.bincount(k)
    return ClusterPosterior(counts, counts / k.size, float(k.mean()))


def batch_means_ess(trace, batch_size=None):
    """Effective sample size ``N * var / (b * var_batch_means)`` with ``b = floor(sqrt(N))``.

    A trace with zero variance returns ``N``.
    """
    x = np.asarray(trace, dtype=float)
    n = x.size
    if n < 2:
        raise ValueError("need at least two draws")
    b = batch_size or max(int(math.isqrt(n)), 1)
    n_batches = n // b
    var = float(np.var(x, ddof=1))
    if var == 0.0:
        return float(n)
    if n_batches < 2:
        return float(n)
    means = x[: n_batches * b].reshape(n_batches, b).mean(axis=1)
    var_bm = b * float(np.var(means, ddof=1))
    if var_bm == 0.0:
        return float(n)
    return n * var / var_bm


@dataclass
class TraceDiagnostics:
    points: np.ndarray
    traces: np.ndarray  # (draws, points)
    ess: np.ndarray


def trace_diagnostics(summary, points, trace_fn=None):
    """Per-draw density (or pmf) at ``points`` and batch-means ESS per point.

    ``trace_fn(summary, points)`` defaults to the mixture density trace, or to
    the pmf trace for a count-data fit.
    """
    points = np.asarray(points)
    if trace_fn is None:
        if getattr(summary, "rounding", None) is not None:
            from .rounded import pmf_trace as trace_fn
        else:
            from .mixture import density_trace as trace_fn
    traces = trace_fn(summary, points)
    if traces.shape[0] < 2:
        raise ValueError("need at least two retained draws")
    ess = np.array([batch_means_ess(traces[:, j]) for j in range(traces.shape[1])])
    return TraceDiagnostics(points, traces, ess)
