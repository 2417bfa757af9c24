"""Random-shift Monte Carlo tests, the Schlather P-M test and global envelopes.

Replicate ``i`` draws its shift from its own stream seeded by
``(seed, i)``, so results do not depend on evaluation order.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Union

import numpy as np
from scipy.linalg import cholesky, LinAlgError
from scipy.special import ndtri
from scipy.spatial.distance import cdist
from scipy.stats import rankdata

from . import stats
from .errors import (DegenerateShiftError, InsufficientPointsError,
                     NumericError, TorusUnsupportedError)
from .geometry import MarkedPointPattern, RectWindow, Window, torus_wrap
from .randfield import CovariateField, eval_field

MAX_REDRAWS = 100
SCALAR_STATS = ("mean", "cov", "pearson", "kendall")
VECTOR_STATS = ("multitype", "multicovariate")
CHUNK_POINTS = 2_000_000


@dataclass(frozen=True)
class ShiftDistribution:
    """Uniform shifts on the window period (``window``) or on a disc (``disc``)."""

    kind: str
    radius: Optional[float] = None
    width: Optional[float] = None
    height: Optional[float] = None

    def __post_init__(self):
        if self.kind == "disc":
            if not (self.radius is not None and self.radius > 0):
                raise ValueError("disc shift needs a positive radius")
        elif self.kind == "window":
            if not (self.width and self.height and self.width > 0 and self.height > 0):
                raise ValueError("window shift needs positive width and height")
        else:
            raise ValueError(f"unknown shift distribution {self.kind!r}")

    @classmethod
    def uniform_window(cls, window: Window) -> "ShiftDistribution":
        return cls("window", width=window.width, height=window.height)

    @classmethod
    def uniform_disc(cls, radius: float) -> "ShiftDistribution":
        return cls("disc", radius=float(radius))

    def describe(self) -> dict:
        if self.kind == "disc":
            return {"kind": "disc", "radius": self.radius}
        return {"kind": "window", "width": self.width, "height": self.height}

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        if self.kind == "window":
            return np.array([rng.uniform(0.0, self.width), rng.uniform(0.0, self.height)])
        r = self.radius
        while True:
            v = rng.uniform(-r, r, 2)
            if v[0] * v[0] + v[1] * v[1] <= r * r:
                return v


def replicate_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(index)])


def draw_shift(dist: ShiftDistribution, seed: int, index: int) -> np.ndarray:
    return dist.sample(replicate_rng(seed, index))


def variance_correct(T, n) -> np.ndarray:
    """Centre by the overall mean and scale by ``sqrt(n_i)``.

    The variance of each statistic is taken proportional to ``1 / n_i``; the
    unknown constant cancels when the values are ranked.
    """
    T = np.asarray(T, dtype=float)
    n = np.asarray(n, dtype=float)
    if T.shape[0] != n.shape[0]:
        raise ValueError(f"length mismatch: {T.shape[0]} statistics, {n.shape[0]} counts")
    if np.any(n < 1):
        raise ValueError("retained counts must be at least 1")
    # counts are per replicate (R,) or per replicate and component (R, K)
    scale = np.sqrt(n) if n.shape == T.shape else np.sqrt(n).reshape((-1,) + (1,) * (T.ndim - 1))
    return (T - T.mean(axis=0)) * scale


def mc_pvalue(values) -> float:
    """``(1 + #{i >= 1: E_i >= E_0}) / (N + 1)``; ties count as extreme."""
    e = np.asarray(values, dtype=float)
    if len(e) < 2:
        raise ValueError("need the observed value and at least one replicate")
    return (1 + int(np.count_nonzero(e[1:] >= e[0]))) / len(e)


def bonferroni_combine(p_values: Sequence[float]) -> float:
    p = list(p_values)
    if not p:
        raise ValueError("no p-values to combine")
    if any(not (0.0 < x <= 1.0) for x in p):
        raise ValueError("p-values must lie in (0, 1]")
    return min(1.0, len(p) * min(p))


@dataclass(frozen=True)
class EnvelopeResult:
    p_value: float
    lower: np.ndarray
    upper: np.ndarray
    observed: np.ndarray
    ranks: np.ndarray = field(repr=False)
    level: float = 0.05

    @property
    def outside(self) -> np.ndarray:
        """Components where the observed vector leaves the envelope."""
        return (self.observed < self.lower) | (self.observed > self.upper)

    def to_dict(self) -> dict:
        return {"p_value": self.p_value, "level": self.level,
                "lower": self.lower.tolist(), "upper": self.upper.tolist(),
                "observed": self.observed.tolist()}


def pointwise_ranks(values: np.ndarray) -> np.ndarray:
    """Two-sided pointwise ranks ``min(#{<=}, #{>=})`` per column over all rows."""
    v = np.asarray(values, dtype=float)
    total = v.shape[0]
    le = rankdata(v, method="max", axis=0)
    ge = total + 1 - rankdata(v, method="min", axis=0)
    return np.minimum(le, ge).astype(np.int64)


def _lex_le_counts(r: np.ndarray) -> np.ndarray:
    """For each row, the number of rows lexicographically ``<=`` it."""
    order = np.lexsort(r.T[::-1])
    srt = r[order]
    new = np.ones(len(srt), dtype=bool)
    new[1:] = np.any(srt[1:] != srt[:-1], axis=1)
    group = np.cumsum(new) - 1
    group_end = np.flatnonzero(np.append(new[1:], True)) + 1
    out = np.empty(len(r), dtype=np.int64)
    out[order] = group_end[group]
    return out


def global_envelope_test(T0, replicates, level: float = 0.05) -> EnvelopeResult:
    """Extreme-rank-length global envelope test.

    Each vector's pointwise ranks are sorted ascending and vectors are
    compared lexicographically; a smaller sequence is more extreme.
    """
    t0 = np.atleast_1d(np.asarray(T0, dtype=float))
    reps = np.asarray(replicates, dtype=float).reshape(-1, t0.size)
    if t0.size == 0:
        raise ValueError("statistic vector is empty")
    if len(reps) < 19:
        raise ValueError(f"global envelope test needs N >= 19 replicates, got {len(reps)}")
    allv = np.vstack([t0, reps])
    ranks = np.sort(pointwise_ranks(allv), axis=1)
    le = _lex_le_counts(ranks)
    total = len(allv)
    p = le[0] / total
    keep = le[1:] / total > level
    kept = reps[keep] if np.any(keep) else reps
    return EnvelopeResult(p, kept.min(axis=0), kept.max(axis=0), t0, ranks, level)


@dataclass(frozen=True)
class TestConfig:
    n_shifts: int = 999
    correction: str = "variance"
    statistic: str = "kendall"
    shift: Optional[ShiftDistribution] = None
    sidedness: Optional[str] = None
    n_min: int = 5
    seed: int = 0

    __test__ = False  # not a pytest class

    def __post_init__(self):
        if self.n_shifts < 19:
            raise ValueError("n_shifts must be at least 19")
        if self.n_min < 5:
            raise ValueError("n_min must be at least 5")
        if self.correction not in ("torus", "variance"):
            raise ValueError(f"unknown correction {self.correction!r}")
        if self.statistic not in SCALAR_STATS + VECTOR_STATS:
            raise ValueError(f"statistic {self.statistic!r} is not a shift-test statistic")
        if self.sidedness not in (None, "two-sided", "one-sided-upper"):
            raise ValueError(f"unknown sidedness {self.sidedness!r}")

    @property
    def side(self) -> str:
        return self.sidedness or "two-sided"

    def shift_for(self, window: Window) -> ShiftDistribution:
        if self.shift is not None:
            return self.shift
        if self.correction == "torus":
            return ShiftDistribution.uniform_window(window)
        return ShiftDistribution.uniform_disc(0.5 * min(window.width, window.height))


@dataclass(frozen=True)
class TestResult:
    test: str
    statistic: str
    correction: str
    t0: Union[float, np.ndarray]
    replicates: np.ndarray
    retained: np.ndarray
    p_value: float
    n_shifts: int
    seed: int
    sidedness: str
    shift: dict
    standardized: Optional[np.ndarray] = None
    shifts: Optional[np.ndarray] = None
    envelope: Optional[EnvelopeResult] = None

    __test__ = False

    def retained_summary(self) -> dict:
        n = self.retained
        if n.ndim > 1:
            return {"min": n.min(axis=0).tolist(), "max": n.max(axis=0).tolist(),
                    "mean": n.mean(axis=0).tolist()}
        return {"min": int(n.min()), "max": int(n.max()), "mean": float(n.mean())}


# -- shift generation ------------------------------------------------------

def _level_counts(keep: np.ndarray, codes: Optional[np.ndarray], m: int) -> np.ndarray:
    if codes is None:
        return np.array([np.count_nonzero(keep)])
    return np.bincount(codes[keep] - 1, minlength=m)


def draw_shifts(pattern: MarkedPointPattern, config: TestConfig) -> np.ndarray:
    """Shift vectors for replicates ``1..N`` (row 0 is the zero shift).

    Under variance correction a shift leaving fewer than ``n_min`` points
    (in any mark level, for categorical patterns) is redrawn.
    """
    dist = config.shift_for(pattern.window)
    n = config.n_shifts
    out = np.zeros((n + 1, 2))
    crop = config.correction == "variance"
    codes = pattern.marks if (config.statistic == "multitype") else None
    m = pattern.n_levels if codes is not None else 1
    for i in range(1, n + 1):
        rng = replicate_rng(config.seed, i)
        for attempt in range(MAX_REDRAWS + 1):
            v = dist.sample(rng)
            if not crop:
                break
            keep = pattern.window.contains(pattern.xy + v)
            if np.all(_level_counts(keep, codes, m) >= config.n_min):
                break
        else:
            raise DegenerateShiftError(
                f"replicate {i}: no admissible shift after {MAX_REDRAWS} redraws")
        out[i] = v
    return out


def _shifted_values(pattern: MarkedPointPattern, fields: Sequence[CovariateField],
                    shifts: np.ndarray, correction: str):
    """Field values at shifted points, shape ``(K, R, n)``, plus retention mask ``(R, n)``."""
    xy = pattern.xy
    if correction == "torus":
        coords = torus_wrap(xy[None, :, :], pattern.window, shifts[:, None, :])
        mask = np.ones(coords.shape[:2], dtype=bool)
    else:
        coords = xy[None, :, :] + shifts[:, None, :]
        mask = pattern.window.contains(coords)
    z = np.zeros((len(fields),) + mask.shape)
    pts = coords[mask]
    for k, f in enumerate(fields):
        z[k][mask] = eval_field(f, pts)
    return z, mask


def _scalar_batch(kind: str, marks, z, mask) -> np.ndarray:
    if kind == "mean":
        return stats.mean_batch(z, mask)
    if kind == "cov":
        return stats.cov_batch(marks, z, mask)
    if kind == "pearson":
        return stats.pearson_batch(marks, z, mask)
    return stats.kendall_batch(marks, z, mask)


def _check_inputs(pattern: MarkedPointPattern, fields, config: TestConfig):
    if config.correction == "torus" and not isinstance(pattern.window, RectWindow):
        raise TorusUnsupportedError("torus correction requires a rectangular window")
    if not fields:
        raise ValueError("at least one covariate field is required")
    need = {"mean": 1, "cov": 2, "pearson": 3, "kendall": 2,
            "multicovariate": 1, "multitype": 1}[config.statistic]
    if config.correction == "variance":
        need = max(need, config.n_min)
    if config.statistic in ("cov", "pearson", "kendall") and pattern.mark_kind != "numeric":
        raise ValueError(f"{config.statistic} statistic needs numeric marks")
    if config.statistic == "multitype":
        if pattern.mark_kind != "categorical" or pattern.n_levels < 2:
            raise ValueError("multitype statistic needs categorical marks with >= 2 levels")
        counts = np.bincount(pattern.marks - 1, minlength=pattern.n_levels)
        if counts.min() < need:
            k = int(np.argmin(counts))
            raise InsufficientPointsError(
                f"mark level {pattern.levels[k]!r} has {counts[k]} points, needs {need}")
    elif len(pattern) < need:
        raise InsufficientPointsError(f"pattern has {len(pattern)} points, needs {need}")


def _evaluate(pattern, fields, shifts, config):
    """Raw statistics ``T`` (R,) or (R, K) and retained counts for all replicates."""
    kind = config.statistic
    n = len(pattern)
    step = max(1, CHUNK_POINTS // max(1, n * len(fields)))
    ts, counts = [], []
    for lo in range(0, len(shifts), step):
        z, mask = _shifted_values(pattern, fields, shifts[lo:lo + step], config.correction)
        if kind in SCALAR_STATS:
            ts.append(_scalar_batch(kind, pattern.marks, z[0], mask))
            counts.append(mask.sum(axis=1))
        elif kind == "multicovariate":
            ts.append(np.stack([stats.mean_batch(zk, mask) for zk in z], axis=1))
            counts.append(mask.sum(axis=1))
        else:
            m = pattern.n_levels
            lv = np.stack([mask & (pattern.marks == k + 1)[None, :] for k in range(m)])
            c = lv.sum(axis=2).T  # (R, M)
            means = np.stack([np.stack([np.where(lv[k], zk, 0.0).sum(axis=1) for k in range(m)],
                                       axis=1) / c for zk in z])  # (K, R, M)
            ts.append(means)
            counts.append(c)
    if kind == "multitype":
        return np.concatenate(ts, axis=1), np.concatenate(counts, axis=0)
    return np.concatenate(ts, axis=0), np.concatenate(counts, axis=0)


def _standardize(T, counts, config) -> Optional[np.ndarray]:
    if config.correction == "variance":
        return variance_correct(T, counts)
    return T - T.mean(axis=0)


def run_shift_test(pattern: MarkedPointPattern,
                   fields: Union[CovariateField, Sequence[CovariateField]],
                   config: TestConfig, name: Optional[str] = None,
                   level: float = 0.05) -> TestResult:
    """Random-shift test of independence between a (marked) pattern and covariate(s).

    The pattern is shifted with its marks while the covariate stays fixed.
    Scalar statistics yield a Monte Carlo p-value on the centred (and, under
    variance correction, ``sqrt(n_i)``-scaled) values; vector statistics are
    assessed with the global envelope test.
    """
    if isinstance(fields, CovariateField):
        fields = [fields]
    fields = list(fields)
    _check_inputs(pattern, fields, config)
    shifts = draw_shifts(pattern, config)
    T, counts = _evaluate(pattern, fields, shifts, config)
    kind = config.statistic
    name = name or f"{'pmc' if kind in ('cov', 'pearson', 'kendall', 'multitype') else 'pc'}"
    common = dict(test=name, statistic=kind, correction=config.correction,
                  n_shifts=config.n_shifts, seed=config.seed, sidedness=config.side,
                  shift=config.shift_for(pattern.window).describe(), shifts=shifts)

    if kind in SCALAR_STATS or kind == "multicovariate":
        S = _standardize(T, counts, config)
        std = S if config.correction == "variance" else None
        if kind == "multicovariate":
            env = global_envelope_test(S[0], S[1:], level)
            return TestResult(t0=T[0], replicates=T[1:], retained=counts,
                              p_value=env.p_value, standardized=std, envelope=env, **common)
        ext = np.abs(S) if config.side == "two-sided" else S
        return TestResult(t0=float(T[0]), replicates=T[1:], retained=counts,
                          p_value=mc_pvalue(ext), standardized=std, **common)

    # multitype: T has shape (K, R, M); counts (R, M)
    S = np.stack([_standardize(tk, counts, config) for tk in T])
    diffs = np.concatenate([stats.pairwise_diffs(sk) for sk in S], axis=1)
    raw = np.concatenate([stats.pairwise_diffs(tk) for tk in T], axis=1)
    env = global_envelope_test(diffs[0], diffs[1:], level)
    return TestResult(t0=raw[0], replicates=raw[1:], retained=counts,
                      p_value=env.p_value,
                      standardized=diffs if config.correction == "variance" else None,
                      envelope=env, **common)


def multitype_pmc_test(pattern: MarkedPointPattern,
                       fields: Union[CovariateField, Sequence[CovariateField]],
                       config: TestConfig, level: float = 0.05) -> TestResult:
    """Categorical marks vs covariate(s): differences of standardised level means.

    The returned result carries the envelope outcome in ``.envelope``.
    """
    return run_shift_test(pattern, fields, replace(config, statistic="multitype"),
                          name="pmc-multitype", level=level)


def multicovariate_pc_test(pattern: MarkedPointPattern,
                           fields: Sequence[CovariateField],
                           config: TestConfig, level: float = 0.05) -> TestResult:
    return run_shift_test(pattern, fields, replace(config, statistic="multicovariate"),
                          name="pc-multicovariate", level=level)


def schlather_test(pattern: MarkedPointPattern, values=None, n_sims: int = 99,
                   seed: int = 0, t_max: Optional[float] = None,
                   bandwidth: Optional[float] = None, n_t: int = stats.N_TGRID,
                   name: str = "pm-schlather") -> TestResult:
    """Parametric Monte Carlo test of the geostatistical marking hypothesis.

    Values (marks by default) are normal-scored, an exponential covariance is
    fitted, and the E(t) deviation statistic of the data is compared with
    ``n_sims`` Gaussian simulations at the observed locations.
    """
    v = pattern.marks if values is None else np.asarray(values, dtype=float)
    if v is None:
        raise ValueError("schlather test needs numeric marks or explicit values")
    n = len(pattern)
    if n < stats.MIN_FIT_POINTS:
        raise InsufficientPointsError(f"schlather test needs n >= 20, got {n}")
    t_max = stats.default_tmax(pattern) if t_max is None else t_max
    bandwidth = 0.1 * t_max if bandwidth is None else bandwidth
    tgrid = stats.default_tgrid(t_max, n_t)

    scores = stats.normal_scores(v)
    fit = stats.fit_exponential_variogram(pattern, scores, t_max)
    kern = stats.MarkCorrelationKernel(pattern.xy, tgrid, bandwidth)
    t0 = stats.schlather_statistic(kern.estimate(scores), scores.mean(), tgrid)

    cov = fit.covariance(cdist(pattern.xy, pattern.xy))
    cov[np.diag_indices(n)] += 1e-6 * fit.sill
    try:
        chol = cholesky(cov, lower=True)
    except LinAlgError as exc:
        raise NumericError(f"covariance factorization failed: {exc}") from None
    rng = np.random.default_rng([int(seed), 0x5C41])
    sims = (chol @ rng.standard_normal((n, n_sims))).T
    # replicates pass through the same normal-score transform as the data
    sims = ndtri((rankdata(sims, axis=1) - 0.5) / n)
    reps = stats.schlather_statistic(kern.estimate(sims), sims.mean(axis=1), tgrid)
    allv = np.concatenate([[t0], reps])
    return TestResult(test=name, statistic="schlather", correction="none", t0=t0,
                      replicates=reps, retained=np.full(n_sims + 1, n),
                      p_value=mc_pvalue(allv), n_shifts=n_sims, seed=seed,
                      sidedness="one-sided-upper",
                      shift={"kind": "none", "sill": fit.sill, "scale": fit.scale})
