"""Poisson and Cox point-process simulation and the M1-M12 scene registry."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ModelError
from .geometry import MarkedPointPattern, RectWindow, Window
from .randfield import (CorrelationModel, CovariateField, FieldSpec,
                        FieldTransform, Grid, eval_field, grid_for_window,
                        simulate_grf_many, transform_fields)

A = 1.0 / math.sqrt(2.0)
BASE_FIELD = FieldSpec(0.0, 1.0, CorrelationModel("exponential", 0.2))
UNIT_SQUARE = RectWindow(0.0, 1.0, 0.0, 1.0)

MODEL_IDS = tuple(f"M{i}" for i in range(1, 13))
ALPHA_MODELS = ("M9", "M10", "M11", "M12")


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _uniform_in(window: Window, n: int, rng: np.random.Generator) -> np.ndarray:
    x0, x1, y0, y1 = window.bbox
    if isinstance(window, RectWindow):
        return np.column_stack([rng.uniform(x0, x1, n), rng.uniform(y0, y1, n)])
    out = np.empty((0, 2))
    while len(out) < n:
        need = n - len(out)
        batch = max(16, int(1.2 * need * (x1 - x0) * (y1 - y0) / window.area))
        cand = np.column_stack([rng.uniform(x0, x1, batch), rng.uniform(y0, y1, batch)])
        out = np.vstack([out, cand[window.contains(cand)]])
    return out[:n]


def simulate_poisson(intensity: float, window: Window, seed) -> MarkedPointPattern:
    """Homogeneous Poisson process; polygons are filled by rejection from the bbox."""
    if not intensity > 0:
        raise ModelError("intensity must be positive")
    rng = _rng(seed)
    n = rng.poisson(intensity * window.area)
    return MarkedPointPattern(_uniform_in(window, n, rng), window, check=False)


def simulate_cox(log_intensity: CovariateField, window: Window, seed) -> MarkedPointPattern:
    """Cox process driven by a gridded log-intensity.

    Each cell receives a Poisson count with mean ``exp(L) * h**2`` (``L`` at
    the cell centre); points are placed uniformly in the cell and those
    outside ``window`` are discarded.
    """
    vals = log_intensity.values
    if not np.all(np.isfinite(vals)):
        raise ModelError("log-intensity contains non-finite values")
    rng = _rng(seed)
    g = log_intensity.grid
    x0, x1, y0, y1 = window.bbox
    if (x0 < g.x0 - 1e-9 * g.h or x1 > g.x1 + 1e-9 * g.h
            or y0 < g.y0 - 1e-9 * g.h or y1 > g.y1 + 1e-9 * g.h):
        raise ModelError("log-intensity grid does not cover the window")
    xs, ys = g.centers()
    col_ok = (xs + 0.5 * g.h > x0) & (xs - 0.5 * g.h < x1)
    row_ok = (ys + 0.5 * g.h > y0) & (ys - 0.5 * g.h < y1)
    mu = np.exp(vals) * g.h * g.h
    mu = np.where(row_ok[:, None] & col_ok[None, :], mu, 0.0)
    counts = rng.poisson(mu)
    rows, cols = np.nonzero(counts)
    reps = counts[rows, cols]
    cx = np.repeat(xs[cols], reps)
    cy = np.repeat(ys[rows], reps)
    total = int(reps.sum())
    xy = np.column_stack([cx + (rng.random(total) - 0.5) * g.h,
                          cy + (rng.random(total) - 0.5) * g.h])
    xy = xy[window.contains(xy)]
    return MarkedPointPattern(xy, window, check=False)


@dataclass(frozen=True)
class ModelSpec:
    id: str
    alpha: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.id not in MODEL_IDS:
            raise ModelError(f"unknown model id {self.id!r}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ModelError("alpha must lie in [0, 1]")


@dataclass(frozen=True, eq=False)
class GeneratedScene:
    pattern: MarkedPointPattern
    covariate: CovariateField
    truth: dict
    mark_field: CovariateField = field(repr=False)
    log_intensity: CovariateField = field(repr=False)


# Each entry: structure string, then builders for (log-intensity, marks,
# covariate) as (field indices, transform) given alpha. Indices are 0-based
# into (Z1, Z2, Z3, Z4).
def _table(alpha: float) -> dict:
    b = math.sqrt(max(0.0, 1.0 - alpha * alpha))
    shift = 4.5 + math.log(1.0 + 2.0 * alpha) / 2.0
    lin = lambda idx, w, off=0.0: (idx, FieldTransform("linear", w, off))
    sq = lambda i: ((i,), FieldTransform("square", (1.0,)))
    return {
        "M1": ("P--M--C--P", lin((0,), (1.0,), 4.5), lin((1,), (1.0,)), lin((2,), (1.0,))),
        "M2": ("P--M+C--P", lin((0,), (1.0,), 4.5), lin((1, 2), (A, A)), lin((1, 3), (A, A))),
        "M3": ("P--M--C+P", lin((0, 2), (A, A), 4.5), lin((1,), (1.0,)), lin((2,), (1.0,))),
        "M4": ("P+M--C--P", lin((0, 1), (A, A), 4.5), lin((1,), (1.0,)), lin((2,), (1.0,))),
        "M5": ("P+M--C+P", lin((1, 2), (A, A), 4.5), lin((1,), (1.0,)), lin((2,), (1.0,))),
        "M6": ("P+M+C--P", lin((0, 1), (A, A), 4.5), lin((1, 3), (A, A)), lin((2, 3), (A, A))),
        "M7": ("P--M+C+P", lin((0, 2), (A, A), 4.5), lin((1, 3), (A, A)), lin((2, 3), (A, A))),
        "M8": ("P+M+C+P", lin((0, 1), (A, A), 4.5), lin((0, 2), (A, A)), lin((1, 2), (A, A))),
        "M9": ("P--M--C+P", lin((0, 2), (b, alpha), 4.5), lin((1,), (1.0,)), lin((2,), (1.0,))),
        "M10": ("P--M--C+P",
                ((2, 0), FieldTransform("neg_square_shift", (alpha, 1.0), shift)),
                sq(1), sq(2)),
        "M11": ("P+M--C--P", lin((0, 1), (b, alpha), 4.5), lin((1,), (1.0,)), lin((2,), (1.0,))),
        "M12": ("P+M--C--P",
                ((1, 0), FieldTransform("neg_square_shift", (alpha, 1.0), shift)),
                sq(1), sq(2)),
    }


def parse_structure(structure: str) -> dict:
    """``"P+M--C--P"`` -> ``{"P-M": True, "M-C": False, "C-P": False}``."""
    signs = []
    i = 1
    while i < len(structure):
        if structure[i] == "+":
            signs.append(True)
            i += 2
        elif structure[i:i + 2] == "--":
            signs.append(False)
            i += 3
        else:
            raise ValueError(f"bad structure string {structure!r}")
    return dict(zip(("P-M", "M-C", "C-P"), signs))


def model_truth(model_id: str, alpha: float = 0.0) -> dict:
    truth = parse_structure(_table(alpha)[model_id][0])
    if model_id in ALPHA_MODELS and alpha == 0.0:
        truth = dict.fromkeys(truth, False)
    return truth


def generate_model(spec: ModelSpec, grid_size: int = 128) -> GeneratedScene:
    """Simulate one scene of the given model on the unit square.

    The four base fields are always drawn, so a seed maps to the same
    ``Z1..Z4`` whatever the model.
    """
    field_ss, cox_ss = np.random.SeedSequence(spec.seed).spawn(2)
    window = UNIT_SQUARE
    grid = grid_for_window(window, grid_size)
    z = simulate_grf_many(BASE_FIELD, grid, np.random.default_rng(field_ss), 4, window)
    row = _table(spec.alpha)[spec.id]
    built = [transform_fields([z[i] for i in idx], t) for idx, t in row[1:]]
    logint, mark_field, covariate = built
    pts = simulate_cox(logint, window, np.random.default_rng(cox_ss))
    marks = eval_field(mark_field, pts.xy)
    pattern = MarkedPointPattern(pts.xy, window, np.atleast_1d(marks), "numeric", check=False)
    return GeneratedScene(pattern, covariate, model_truth(spec.id, spec.alpha),
                          mark_field, logint)
