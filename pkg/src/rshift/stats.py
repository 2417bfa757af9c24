"""Test statistics for points, marks and covariates.

Scalar statistics come in two flavours: plain functions on one sample and
``*_batch`` versions that evaluate many replicates at once, given a value
matrix of shape ``(R, n)`` and a boolean retention mask of the same shape.
The batch versions reproduce the plain ones exactly on every row.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import ndtri
from scipy.stats import rankdata

from .errors import (DegenerateSampleError, EstimationError, FitFailureError,
                     InsufficientPointsError)
from .geometry import MarkedPointPattern
from .randfield import CovariateField, eval_field

STATISTIC_KINDS = ("mean", "cov", "pearson", "kendall", "schlather",
                   "multitype", "multicovariate")

KENDALL_FAST_MIN_N = 200
N_BINS = 15
N_TGRID = 50
MIN_FIT_POINTS = 20
MIN_NONEMPTY_BINS = 5


def _need(n: int, k: int, what: str = "statistic"):
    if n < k:
        raise InsufficientPointsError(f"{what} needs at least {k} points, got {n}")


def stat_mean_at_points(pattern: MarkedPointPattern, field: CovariateField) -> float:
    _need(len(pattern), 1, "mean-at-points")
    return float(np.mean(eval_field(field, pattern.xy)))


def stat_sample_cov(m, z) -> float:
    m = np.asarray(m, dtype=float)
    z = np.asarray(z, dtype=float)
    _need(len(m), 2, "sample covariance")
    return float(np.dot(m - m.mean(), z - z.mean()) / (len(m) - 1))


def stat_pearson(m, z) -> float:
    m = np.asarray(m, dtype=float)
    z = np.asarray(z, dtype=float)
    _need(len(m), 3, "Pearson correlation")
    dm, dz = m - m.mean(), z - z.mean()
    sm, sz = np.dot(dm, dm), np.dot(dz, dz)
    if sm == 0 or sz == 0:
        raise DegenerateSampleError("Pearson correlation of a constant sample")
    return float(np.dot(dm, dz) / (np.sqrt(sm) * np.sqrt(sz)))


def kendall_reference(m, z) -> float:
    """Tau-a over ordered pairs, straight from the double sum (O(n^2))."""
    m = np.asarray(m, dtype=float)
    z = np.asarray(z, dtype=float)
    n = len(m)
    _need(n, 2, "Kendall correlation")
    sm = np.sign(m[:, None] - m[None, :]).astype(np.int64)
    sz = np.sign(z[:, None] - z[None, :]).astype(np.int64)
    s = int(np.sum(sm * sz))
    return s / (n * (n - 1))


def _count_inversions(a: np.ndarray) -> int:
    """Pairs ``i < j`` with ``a[i] > a[j]``; ``a`` holds ints in ``[0, n)``.

    Bottom-up merge sort; each level counts, for every element of a right
    run, the elements of its left run that exceed it.
    """
    a = np.asarray(a, dtype=np.int64).copy()
    n = len(a)
    big = n + 1
    idx = np.arange(n, dtype=np.int64)
    inv = 0
    width = 1
    while width < n:
        block = idx // (2 * width)
        is_left = (idx % (2 * width)) < width
        keys = block * big + a
        lkeys = keys[is_left]  # sorted: runs are sorted and blocks increase
        rkeys = keys[~is_left]
        rblock = block[~is_left]
        left_end = np.searchsorted(lkeys, (rblock + 1) * big, side="left")
        not_greater = np.searchsorted(lkeys, rkeys, side="right")
        inv += int(np.sum(left_end - not_greater))
        a = np.sort(keys) - block * big
        width *= 2
    return inv


def _tied_pairs(x: np.ndarray) -> int:
    _, counts = np.unique(x, return_counts=True)
    return int(np.sum(counts * (counts - 1) // 2))


def kendall_fast(m, z) -> float:
    """Tau-a in O(n log^2 n) by inversion counting; equals the reference."""
    m = np.asarray(m, dtype=float)
    z = np.asarray(z, dtype=float)
    n = len(m)
    _need(n, 2, "Kendall correlation")
    order = np.lexsort((z, m))
    _, zrank = np.unique(z, return_inverse=True)
    discordant = _count_inversions(zrank[order])
    n0 = n * (n - 1) // 2
    n1 = _tied_pairs(m)
    n2 = _tied_pairs(z)
    n3 = _tied_pairs(m + 1j * z) if (n1 and n2) else 0
    s = 2 * (n0 - n1 - n2 + n3 - 2 * discordant)
    return s / (n * (n - 1))


def stat_kendall(m, z) -> float:
    if len(m) >= KENDALL_FAST_MIN_N:
        return kendall_fast(m, z)
    return kendall_reference(m, z)


# -- batched forms used by the shift engine --------------------------------

def mean_batch(z: np.ndarray, mask: np.ndarray) -> np.ndarray:
    n = mask.sum(axis=1)
    return np.where(mask, z, 0.0).sum(axis=1) / n


def _centered(x, mask, n):
    xm = np.where(mask, x, 0.0)
    mu = xm.sum(axis=1, keepdims=True) / n[:, None]
    return np.where(mask, x - mu, 0.0)


def cov_batch(m: np.ndarray, z: np.ndarray, mask: np.ndarray) -> np.ndarray:
    n = mask.sum(axis=1)
    m = np.broadcast_to(m, z.shape)
    return np.sum(_centered(m, mask, n) * _centered(z, mask, n), axis=1) / (n - 1)


def pearson_batch(m: np.ndarray, z: np.ndarray, mask: np.ndarray) -> np.ndarray:
    n = mask.sum(axis=1)
    m = np.broadcast_to(m, z.shape)
    dm, dz = _centered(m, mask, n), _centered(z, mask, n)
    sm, sz = np.sum(dm * dm, axis=1), np.sum(dz * dz, axis=1)
    if np.any(sm == 0) or np.any(sz == 0):
        raise DegenerateSampleError("Pearson correlation of a constant sample")
    return np.sum(dm * dz, axis=1) / (np.sqrt(sm) * np.sqrt(sz))


def kendall_batch(m: np.ndarray, z: np.ndarray, mask: np.ndarray,
                  chunk_elems: int = 4_000_000) -> np.ndarray:
    """Tau-a per row; marks ``m`` are shared by all rows (shape ``(n,)``)."""
    r, n = z.shape
    counts = mask.sum(axis=1)
    out = np.empty(r)
    if n >= KENDALL_FAST_MIN_N:
        for i in range(r):
            keep = mask[i]
            out[i] = kendall_fast(m[keep], z[i, keep])
        return out
    sm = np.sign(m[:, None] - m[None, :])
    step = max(1, chunk_elems // max(1, n * n))
    for lo in range(0, r, step):
        zz = z[lo:lo + step]
        mk = mask[lo:lo + step]
        sz = np.sign(zz[:, :, None] - zz[:, None, :])
        w = (mk[:, :, None] & mk[:, None, :])
        s = np.einsum("rij,ij->r", np.where(w, sz, 0.0), sm)
        out[lo:lo + step] = s
    # integer-valued sums are exact in float64 at these sizes
    s_int = np.rint(out).astype(np.int64)
    return np.array([int(s) / (int(c) * (int(c) - 1)) for s, c in zip(s_int, counts)])


# -- Schlather machinery ---------------------------------------------------

def normal_scores(marks) -> np.ndarray:
    """Standard-normal quantiles of ``(rank - 0.5) / n`` with average ranks for ties."""
    x = np.asarray(marks, dtype=float)
    _need(len(x), 2, "normal scores")
    return ndtri((rankdata(x) - 0.5) / len(x))


@dataclass(frozen=True)
class VariogramFit:
    sill: float
    scale: float
    family: str = "exponential"

    def covariance(self, r):
        return self.sill * np.exp(-np.asarray(r) / self.scale)


def default_tmax(pattern: MarkedPointPattern) -> float:
    w = pattern.window
    return 0.25 * min(w.width, w.height)


def _golden_min(f, a: float, b: float, tol: float = 1e-6, maxit: int = 200) -> float:
    g = (np.sqrt(5.0) - 1.0) / 2.0
    c, d = b - g * (b - a), a + g * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(maxit):
        if abs(b - a) <= tol * (abs(c) + abs(d)):
            break
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - g * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + g * (b - a)
            fd = f(d)
    return c if fc < fd else d


def empirical_variogram(xy, values, t_max: float, n_bins: int = N_BINS):
    """Binned semivariogram: bin centres, mean semivariance, pair counts."""
    xy = np.asarray(xy, dtype=float)
    v = np.asarray(values, dtype=float)
    pairs = cKDTree(xy).query_pairs(t_max, output_type="ndarray")
    edges = np.linspace(0.0, t_max, n_bins + 1)
    centers = 0.5 * (edges[:-1] + edges[1:])
    if len(pairs) == 0:
        return centers, np.zeros(n_bins), np.zeros(n_bins, dtype=int)
    d = np.linalg.norm(xy[pairs[:, 0]] - xy[pairs[:, 1]], axis=1)
    semi = 0.5 * (v[pairs[:, 0]] - v[pairs[:, 1]]) ** 2
    b = np.minimum((d / t_max * n_bins).astype(int), n_bins - 1)
    counts = np.bincount(b, minlength=n_bins)
    sums = np.bincount(b, weights=semi, minlength=n_bins)
    gamma = np.divide(sums, counts, out=np.zeros(n_bins), where=counts > 0)
    return centers, gamma, counts


def fit_exponential_variogram(pattern: MarkedPointPattern, values,
                              t_max: Optional[float] = None) -> VariogramFit:
    """Weighted least-squares exponential variogram without nugget.

    The sill is profiled out in closed form for each candidate scale and the
    scale is found by golden-section search on ``[t_max/100, 2 t_max]``.
    """
    n = len(pattern)
    if n < MIN_FIT_POINTS:
        raise FitFailureError(f"variogram fit refused: {n} < {MIN_FIT_POINTS} points")
    t_max = default_tmax(pattern) if t_max is None else t_max
    h, gamma, w = empirical_variogram(pattern.xy, values, t_max)
    used = w > 0
    if used.sum() < MIN_NONEMPTY_BINS:
        raise FitFailureError("fewer than 5 nonempty variogram bins")
    h, gamma, w = h[used], gamma[used], w[used].astype(float)

    def sill_for(phi):
        g = 1.0 - np.exp(-h / phi)
        return np.sum(w * gamma * g) / np.sum(w * g * g), g

    def loss(phi):
        s, g = sill_for(phi)
        return float(np.sum(w * (gamma - s * g) ** 2))

    phi = _golden_min(loss, t_max / 100.0, 2.0 * t_max)
    sill, _ = sill_for(phi)
    if not (sill > 0 and np.isfinite(sill)):
        raise FitFailureError("variogram fit gave a non-positive sill")
    return VariogramFit(float(sill), float(phi))


def default_tgrid(t_max: float, n: int = N_TGRID) -> np.ndarray:
    return np.linspace(t_max / n, t_max, n)


def epanechnikov(x):
    x = np.asarray(x, dtype=float)
    return np.where(np.abs(x) < 1.0, 0.75 * (1.0 - x * x), 0.0)


class MarkCorrelationKernel:
    """Pair geometry and kernel weights for the E(t) estimator.

    Geometry is fixed across Monte Carlo replicates in which only the marks
    change, so the weight matrix is built once.
    """

    def __init__(self, xy, t_grid, bandwidth: float):
        xy = np.asarray(xy, dtype=float)
        self.t_grid = np.asarray(t_grid, dtype=float)
        self.bandwidth = float(bandwidth)
        _need(len(xy), 2, "E(t) estimation")
        reach = self.t_grid[-1] + self.bandwidth
        self.pairs = cKDTree(xy).query_pairs(reach, output_type="ndarray")
        if len(self.pairs):
            d = np.linalg.norm(xy[self.pairs[:, 0]] - xy[self.pairs[:, 1]], axis=1)
        else:
            d = np.zeros(0)
        self.k = epanechnikov((self.t_grid[None, :] - d[:, None]) / self.bandwidth)
        self.den = 2.0 * self.k.sum(axis=0)
        self.defined = self.den > 0
        if not np.any(self.defined):
            raise EstimationError("no t-grid entry has pairs within the kernel support")

    def estimate(self, marks) -> np.ndarray:
        """E-hat for one mark vector ``(n,)`` or many ``(R, n)``; NaN where undefined."""
        m = np.asarray(marks, dtype=float)
        if len(self.pairs):
            s = m[..., self.pairs[:, 0]] + m[..., self.pairs[:, 1]]
            num = s @ self.k
        else:
            num = np.zeros(m.shape[:-1] + (len(self.t_grid),))
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.defined, num / np.where(self.defined, self.den, 1.0), np.nan)


def estimate_E(pattern: MarkedPointPattern, marks, t_grid, bandwidth: float) -> np.ndarray:
    """Conditional mean mark given another point at distance ``t``."""
    t_grid = np.asarray(t_grid, dtype=float)
    if np.any(t_grid <= 0) or np.any(np.diff(t_grid) <= 0):
        raise ValueError("t_grid must be positive and increasing")
    return MarkCorrelationKernel(pattern.xy, t_grid, bandwidth).estimate(marks)


def _grid_step(t_grid) -> float:
    t = np.asarray(t_grid, dtype=float)
    return float(t[1] - t[0]) if len(t) > 1 else float(t[0])


def schlather_statistic(Ehat, mbar, t_grid) -> float:
    """Constant-weight L2 distance between E-hat and the mean mark; NaNs skipped."""
    e = np.asarray(Ehat, dtype=float)
    dev = e - np.asarray(mbar, dtype=float)[..., None] if e.ndim > 1 else e - mbar
    sq = np.where(np.isnan(dev), 0.0, dev * dev)
    res = np.sqrt(_grid_step(t_grid) * sq.sum(axis=-1))
    return float(res) if np.ndim(res) == 0 else res


# -- vector statistics -----------------------------------------------------

def pair_order(m: int) -> list[tuple[int, int]]:
    """Index pairs ``(0,1), (0,2), ..., (m-2, m-1)``."""
    return [(i, j) for i in range(m) for j in range(i + 1, m)]


def pairwise_diffs(means) -> np.ndarray:
    """All ``T^i - T^j`` for ``i < j`` along the last axis."""
    t = np.asarray(means, dtype=float)
    pairs = pair_order(t.shape[-1])
    i = np.array([p[0] for p in pairs], dtype=int)
    j = np.array([p[1] for p in pairs], dtype=int)
    return t[..., i] - t[..., j]


def level_means(pattern: MarkedPointPattern, field: CovariateField) -> np.ndarray:
    if pattern.mark_kind != "categorical":
        raise ValueError("pattern needs categorical marks")
    z = np.atleast_1d(eval_field(field, pattern.xy))
    out = np.empty(pattern.n_levels)
    for k in range(pattern.n_levels):
        sel = pattern.marks == k + 1
        if not np.any(sel):
            raise InsufficientPointsError(
                f"mark level {pattern.levels[k]!r} has no points")
        out[k] = z[sel].mean()
    return out


def multitype_mean_diffs(pattern: MarkedPointPattern, field: CovariateField) -> np.ndarray:
    return pairwise_diffs(level_means(pattern, field))


def multicovariate_means(pattern: MarkedPointPattern,
                         fields: Sequence[CovariateField]) -> np.ndarray:
    return np.array([stat_mean_at_points(pattern, f) for f in fields])
