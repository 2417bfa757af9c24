"""Batch simulation studies: rejection-rate tables and variance-order curves.

Every scene and every test replicate draws from a seed derived from the
master seed and its coordinates (model, alpha, test, replication), so a
cell's output is independent of worker count and execution order.
Completed cells are cached on disk and reused on resume.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import os
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.stats import binomtest

from .errors import (ConfigError, DegenerateSampleError, InsufficientPointsError,
                     NumericError, StaleCacheError)
from .geometry import RectWindow
from .procgen import ModelSpec, generate_model, simulate_poisson
from .randfield import (CorrelationModel, FieldSpec, eval_field,
                        grid_for_window, simulate_grf_many)
from .shifttest import TestConfig, run_shift_test, schlather_test
from .stats import stat_kendall

log = logging.getLogger(__name__)

ALPHA_GRID = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)
STUDY_KINDS = ("overall", "preferential", "marking", "variance-order")
STUDY_MODELS = {
    "overall": ("M1", "M2", "M3", "M4", "M5", "M6", "M7", "M8"),
    "preferential": ("M9", "M10"),
    "marking": ("M11", "M12"),
}

# test id -> (label, kind, correction, statistic)
TESTS = {
    "pm-schlather": ("P-M (Schlather)", "schlather-marks", None, None),
    "pc-torus": ("P-C (torus)", "shift", "torus", "mean"),
    "pc-variance": ("P-C (variance)", "shift", "variance", "mean"),
    "pc-schlather": ("P-C (Schlather)", "schlather-covariate", None, None),
    "pmc-torus-cov": ("PM-C (torus, cov)", "shift", "torus", "cov"),
    "pmc-variance-cov": ("PM-C (variance, cov)", "shift", "variance", "cov"),
    "pmc-torus-pea": ("PM-C (torus, Pea)", "shift", "torus", "pearson"),
    "pmc-variance-pea": ("PM-C (variance, Pea)", "shift", "variance", "pearson"),
    "pmc-torus-ken": ("PM-C (torus, Ken)", "shift", "torus", "kendall"),
    "pmc-variance-ken": ("PM-C (variance, Ken)", "shift", "variance", "kendall"),
}
DEFAULT_ROSTER = {
    "overall": tuple(TESTS),
    "preferential": ("pc-variance",) + tuple(t for t in TESTS if t.startswith("pmc")),
    "marking": ("pc-variance",) + tuple(t for t in TESTS if t.startswith("pmc")),
}
ABORTABLE = (NumericError, InsufficientPointsError, DegenerateSampleError)

VARIANCE_KINDS = ("pc", "pmc-equal", "pmc-unequal")
VARIANCE_SIDES = tuple(0.5 * k for k in range(1, 9))
SCHLATHER_SIMS = 99
VARIANCE_SCALES = (0.05, 0.10, 0.20)


def derive_seed(master: int, *parts) -> int:
    """63-bit seed from the master seed and a tuple of identifying parts."""
    key = json.dumps([int(master)] + [str(p) for p in parts]).encode()
    return int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "big") >> 1


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get("RSHIFT_WORKERS", "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class StudyConfig:
    kind: str = "overall"
    n_replications: int = 500
    n_shifts: int = 199
    level: float = 0.05
    tests: Optional[tuple] = None
    seed: int = 2021
    workers: int = 1
    alphas: tuple = ALPHA_GRID
    models: Optional[tuple] = None
    variance_kind: str = "pc"
    scales: tuple = VARIANCE_SCALES
    sides: tuple = VARIANCE_SIDES
    intensity: float = 100.0

    def __post_init__(self):
        if self.kind not in STUDY_KINDS:
            raise ConfigError(f"unknown study kind {self.kind!r}")
        if self.n_replications < 50:
            raise ConfigError("n_replications must be at least 50")
        if not set(self.alphas) <= set(ALPHA_GRID):
            raise ConfigError(f"alpha values must come from {ALPHA_GRID}")
        if self.variance_kind not in VARIANCE_KINDS:
            raise ConfigError(f"unknown variance-order kind {self.variance_kind!r}")
        for t in self.roster if self.kind != "variance-order" else ():
            if t not in TESTS:
                raise ConfigError(f"unknown test id {t!r}")
        if not 0.0 < self.level <= 1.0:
            raise ConfigError("level must lie in (0, 1]")

    @classmethod
    def full_scale(cls, **kw) -> "StudyConfig":
        kw.setdefault("n_replications", 5000)
        kw.setdefault("n_shifts", 999)
        return cls(**kw)

    @property
    def roster(self) -> tuple:
        return tuple(self.tests) if self.tests else DEFAULT_ROSTER.get(self.kind, ())

    @property
    def model_ids(self) -> tuple:
        return tuple(self.models) if self.models else STUDY_MODELS.get(self.kind, ())

    def columns(self) -> list[tuple[str, float]]:
        if self.kind == "overall":
            return [(m, 0.0) for m in self.model_ids]
        return [(m, float(a)) for m in self.model_ids for a in self.alphas]

    def cell_key(self) -> dict:
        """Settings that determine cell contents (worker count excluded)."""
        d = asdict(self)
        d.pop("workers")
        d["tests"] = list(self.roster)
        d["models"] = list(self.model_ids)
        return d

    def digest(self) -> str:
        blob = json.dumps(self.cell_key(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True)
class Rate:
    rate: float
    lo: float
    hi: float
    n: int
    aborted: int = 0


def clopper_pearson(k: int, n: int, confidence: float = 0.95) -> tuple[float, float]:
    if n == 0:
        return 0.0, 1.0
    ci = binomtest(k, n).proportion_ci(confidence, method="exact")
    return float(ci.low), float(ci.high)


def rate_from_pvalues(pvals, level: float) -> Rate:
    p = np.asarray(pvals, dtype=float)
    ok = ~np.isnan(p)
    n = int(ok.sum())
    k = int(np.count_nonzero(p[ok] <= level))
    lo, hi = clopper_pearson(k, n)
    return Rate(k / n if n else float("nan"), lo, hi, n, int((~ok).sum()))


def run_test_on_scene(test_id: str, scene, n_shifts: int, seed: int) -> float:
    _, kind, correction, statistic = TESTS[test_id]
    pat = scene.pattern
    if kind == "schlather-marks":
        return schlather_test(pat, n_sims=SCHLATHER_SIMS, seed=seed).p_value
    if kind == "schlather-covariate":
        vals = eval_field(scene.covariate, pat.xy)
        return schlather_test(pat, vals, n_sims=SCHLATHER_SIMS, seed=seed).p_value
    cfg = TestConfig(n_shifts=n_shifts, correction=correction, statistic=statistic, seed=seed)
    return run_shift_test(pat, scene.covariate, cfg).p_value


def _column_chunk(args) -> np.ndarray:
    model_id, alpha, tests, n_shifts, master, reps = args
    out = np.full((len(tests), len(reps)), np.nan)
    for j, rep in enumerate(reps):
        scene = generate_model(ModelSpec(
            model_id, alpha, derive_seed(master, "scene", model_id, alpha, rep)))
        for i, t in enumerate(tests):
            seed = derive_seed(master, "test", model_id, alpha, t, rep)
            try:
                out[i, j] = run_test_on_scene(t, scene, n_shifts, seed)
            except ABORTABLE as exc:
                log.debug("replicate %s/%s/%s aborted: %s", model_id, t, rep, exc)
    return out


def _chunks(n: int, parts: int) -> list[list[int]]:
    size = max(1, -(-n // max(1, parts * 4)))
    return [list(range(lo, min(n, lo + size))) for lo in range(0, n, size)]


def column_pvalues(model_id: str, alpha: float, tests: Sequence[str], n_reps: int,
                   n_shifts: int, seed: int, workers: int = 1) -> np.ndarray:
    """p-values of every roster test on ``n_reps`` scenes; NaN marks an aborted replicate."""
    tests = tuple(tests)
    jobs = [(model_id, float(alpha), tests, n_shifts, seed, c)
            for c in _chunks(n_reps, workers)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            parts = list(ex.map(_column_chunk, jobs))
    else:
        parts = [_column_chunk(j) for j in jobs]
    return np.concatenate(parts, axis=1)


def rejection_rate(model: ModelSpec, test_id: str, n_reps: int = 500,
                   level: float = 0.05, seed: int = 0, n_shifts: int = 199,
                   workers: int = 1) -> Rate:
    """Fraction of scenes in which ``test_id`` rejects at ``level``, with exact 95% CI."""
    p = column_pvalues(model.id, model.alpha, [test_id], n_reps, n_shifts, seed, workers)[0]
    r = rate_from_pvalues(p, level)
    if r.aborted > 0.01 * n_reps:
        warnings.warn(f"{r.aborted} of {n_reps} replicates aborted for {model.id}/{test_id}")
    return r


@dataclass
class RejectionTable:
    tests: tuple
    columns: list
    cells: dict  # (test, column label) -> Rate

    @staticmethod
    def column_label(model_id: str, alpha: float, kind: str) -> str:
        return model_id if kind == "overall" else f"{model_id}:a={alpha:.1f}"

    def rate(self, test: str, column: str) -> float:
        return self.cells[(test, column)].rate

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["test"] + list(self.columns))
        for t in self.tests:
            row = [t]
            for c in self.columns:
                r = self.cells[(t, c)]
                row.append(f"{r.rate:.4f},{r.lo:.4f},{r.hi:.4f}")
            w.writerow(row)
        return buf.getvalue()

    def format(self) -> str:
        width = max(len(TESTS[t][0]) for t in self.tests) + 2
        lines = [" " * width + " ".join(f"{c:>10}" for c in self.columns)]
        for t in self.tests:
            vals = " ".join(f"{self.cells[(t, c)].rate:>10.3f}" for c in self.columns)
            lines.append(f"{TESTS[t][0]:<{width}}{vals}")
        return "\n".join(lines)


@dataclass
class VarianceCurve:
    kind: str
    sides: tuple
    scales: tuple
    values: np.ndarray  # (len(scales), len(sides))
    n_reps: int

    def ratio(self, scale_index: int, sides: Optional[Sequence[float]] = None) -> float:
        """max/min of the curve for one scale, optionally over a subset of sides."""
        v = self.values[scale_index]
        if sides is not None:
            sel = [i for i, a in enumerate(self.sides) if any(abs(a - s) < 1e-9 for s in sides)]
            v = v[sel]
        return float(v.max() / v.min())

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["a", "scale", "value"])
        for i, s in enumerate(self.scales):
            for j, a in enumerate(self.sides):
                w.writerow([repr(float(a)), repr(float(s)), repr(float(self.values[i, j]))])
        return buf.getvalue()


# -- variance-order study --------------------------------------------------

def _variance_fields(kind: str, scale: float):
    sph = FieldSpec(0.0, 1.0, CorrelationModel("spherical", scale))
    if kind == "pmc-unequal":
        return sph, FieldSpec(0.0, 1.0, CorrelationModel("exponential", scale))
    return sph, sph


def _variance_chunk(args) -> np.ndarray:
    kind, a, scale, cell_size, intensity, master, reps = args
    window = RectWindow(0.0, a, 0.0, a)
    grid = grid_for_window(window, cell_size=cell_size)
    mark_spec, cov_spec = _variance_fields(kind, scale)
    out = np.empty(len(reps))
    for j, rep in enumerate(reps):
        rng = np.random.default_rng(derive_seed(master, "variance", kind, a, scale, rep))
        pts = simulate_poisson(intensity, window, rng)
        if kind == "pc":
            z = simulate_grf_many(cov_spec, grid, rng, 1, window)[0]
            out[j] = np.mean(eval_field(z, pts.xy)) if len(pts) else np.nan
            continue
        if mark_spec == cov_spec:
            mfield, zfield = simulate_grf_many(mark_spec, grid, rng, 2, window)
        else:
            mfield = simulate_grf_many(mark_spec, grid, rng, 1, window)[0]
            zfield = simulate_grf_many(cov_spec, grid, rng, 1, window)[0]
        if len(pts) < 2:
            out[j] = np.nan
            continue
        out[j] = stat_kendall(eval_field(mfield, pts.xy), eval_field(zfield, pts.xy))
    return out


def variance_order_cell(kind: str, a: float, scale: float, n_reps: int, seed: int,
                        intensity: float = 100.0, cell_size: Optional[float] = None,
                        workers: int = 1) -> float:
    """``a**2`` times the sample variance of the statistic over ``n_reps`` scenes on ``[0,a]^2``."""
    cell_size = scale / 5.0 if cell_size is None else cell_size
    jobs = [(kind, float(a), float(scale), cell_size, intensity, seed, c)
            for c in _chunks(n_reps, workers)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            vals = np.concatenate(list(ex.map(_variance_chunk, jobs)))
    else:
        vals = np.concatenate([_variance_chunk(j) for j in jobs])
    vals = vals[~np.isnan(vals)]
    return float(a * a * np.var(vals, ddof=1))


def variance_order_study(kind: str = "pc", scales: Sequence[float] = VARIANCE_SCALES,
                         seed: int = 0, n_reps: int = 2000,
                         sides: Sequence[float] = VARIANCE_SIDES,
                         intensity: float = 100.0, workers: int = 1,
                         cell_size: Optional[float] = None) -> VarianceCurve:
    if kind not in VARIANCE_KINDS:
        raise ConfigError(f"unknown variance-order kind {kind!r}")
    vals = np.array([[variance_order_cell(kind, a, s, n_reps, seed, intensity, cell_size, workers)
                      for a in sides] for s in scales])
    return VarianceCurve(kind, tuple(sides), tuple(scales), vals, n_reps)


# -- orchestration ---------------------------------------------------------

def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1) + "\n"


def _atomic_write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + f".tmp{os.getpid()}")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _prepare_cache(cache_dir: Optional[Path], config: StudyConfig) -> Optional[Path]:
    if cache_dir is None:
        return None
    cache_dir = Path(cache_dir)
    stamp = cache_dir / "config.json"
    if stamp.exists():
        old = json.loads(stamp.read_text(encoding="utf-8"))
        if old.get("digest") != config.digest():
            raise StaleCacheError(
                f"cache at {cache_dir} was built for config {old.get('digest')}, "
                f"current config is {config.digest()}")
    else:
        _atomic_write(stamp, _dump({"digest": config.digest(), "config": config.cell_key()}))
    return cache_dir


def _cell_file(cache: Path, name: str) -> Path:
    return cache / "cells" / f"{name}.json"


def _cell_name(model_id: str, alpha: float) -> str:
    return f"{model_id}_a{alpha:.1f}"


def _pvals_to_json(p: np.ndarray) -> list:
    return [[None if np.isnan(x) else float(x) for x in row] for row in p]


def run_study(config: StudyConfig, out_dir: Optional[Path] = None,
              cache_dir: Optional[Path] = None):
    """Run a study, reusing cached cells; writes CSV and a JSON manifest to ``out_dir``."""
    cache = _prepare_cache(cache_dir, config)
    started = time.time()
    runtimes, aborts, seeds = {}, {}, {}
    if config.kind == "variance-order":
        result = _run_variance_study(config, cache, runtimes, seeds)
    else:
        result = _run_rejection_study(config, cache, runtimes, aborts, seeds)
    if out_dir is not None:
        out = Path(out_dir)
        name = config.kind if config.kind != "variance-order" else f"variance-order-{config.variance_kind}"
        _atomic_write(out / f"{name}.csv", result.to_csv())
        manifest = {"config": config.cell_key(), "digest": config.digest(),
                    "workers": config.workers, "seeds": seeds, "aborted": aborts,
                    "runtimes_s": runtimes, "total_runtime_s": round(time.time() - started, 3)}
        _atomic_write(out / f"{name}.manifest.json", _dump(manifest))
    return result


def _cached(cache, name, compute, runtimes):
    path = _cell_file(cache, name) if cache is not None else None
    if path is not None and path.exists():
        runtimes[name] = 0.0
        return json.loads(path.read_text(encoding="utf-8"))
    t = time.time()
    payload = compute()
    runtimes[name] = round(time.time() - t, 3)
    if path is not None:
        _atomic_write(path, _dump(payload))
    return payload


def _run_rejection_study(config, cache, runtimes, aborts, seeds) -> RejectionTable:
    tests = config.roster
    labels, cells = [], {}
    for model_id, alpha in config.columns():
        label = RejectionTable.column_label(model_id, alpha, config.kind)
        labels.append(label)
        name = _cell_name(model_id, alpha)
        seeds[label] = config.seed

        def compute():
            p = column_pvalues(model_id, alpha, tests, config.n_replications,
                               config.n_shifts, config.seed, config.workers)
            return {"model": model_id, "alpha": alpha, "tests": list(tests),
                    "pvalues": _pvals_to_json(p)}

        payload = _cached(cache, name, compute, runtimes)
        for t, row in zip(payload["tests"], payload["pvalues"]):
            r = rate_from_pvalues([np.nan if x is None else x for x in row], config.level)
            cells[(t, label)] = r
            if r.aborted:
                aborts[f"{t}/{label}"] = r.aborted
                if r.aborted > 0.01 * config.n_replications:
                    warnings.warn(f"{r.aborted} aborted replicates in {t}/{label}")
    return RejectionTable(tests, labels, cells)


def _run_variance_study(config, cache, runtimes, seeds) -> VarianceCurve:
    vals = np.empty((len(config.scales), len(config.sides)))
    for i, s in enumerate(config.scales):
        for j, a in enumerate(config.sides):
            name = f"{config.variance_kind}_a{a:g}_s{s:g}"
            seeds[name] = config.seed
            payload = _cached(cache, name, lambda: {"value": variance_order_cell(
                config.variance_kind, a, s, config.n_replications, config.seed,
                config.intensity, workers=config.workers)}, runtimes)
            vals[i, j] = payload["value"]
    return VarianceCurve(config.variance_kind, tuple(config.sides), tuple(config.scales),
                         vals, config.n_replications)
