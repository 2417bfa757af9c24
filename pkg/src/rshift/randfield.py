"""Stationary Gaussian random fields on regular grids.

Fields are simulated exactly at grid-cell centres by circulant embedding
and evaluated elsewhere by bilinear interpolation between cell centres.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np

from .errors import GeometryMismatchError, OutOfRangeError, SimulationError
from .geometry import RectWindow, Window

DEFAULT_GRID_SIZE = 128
EMBED_FACTORS = (2, 4)
NEG_EIG_TOL = 1e-8


@dataclass(frozen=True)
class CorrelationModel:
    family: str = "exponential"
    scale: float = 0.2

    def __post_init__(self):
        if self.family not in ("exponential", "spherical"):
            raise ValueError(f"unknown correlation family {self.family!r}")
        if not self.scale > 0:
            raise ValueError("correlation scale must be positive")


@dataclass(frozen=True)
class FieldSpec:
    mean: float = 0.0
    variance: float = 1.0
    correlation: CorrelationModel = CorrelationModel()

    def __post_init__(self):
        if not self.variance >= 0:
            raise ValueError("variance must be non-negative")


def correlation(model: CorrelationModel, r):
    """Isotropic correlation at distance(s) ``r``."""
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise OutOfRangeError("distance must be non-negative")
    s = r / model.scale
    if model.family == "exponential":
        out = np.exp(-s)
    else:
        out = np.where(s < 1.0, 1.0 - 1.5 * s + 0.5 * s ** 3, 0.0)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class Grid:
    """Regular grid of square cells; ``(x0, y0)`` is the lower-left corner."""

    x0: float
    y0: float
    h: float
    ncols: int
    nrows: int

    @property
    def x1(self) -> float:
        return self.x0 + self.ncols * self.h

    @property
    def y1(self) -> float:
        return self.y0 + self.nrows * self.h

    def centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Cell-centre coordinates, ``x`` by column and ``y`` by row (north first)."""
        xs = self.x0 + (np.arange(self.ncols) + 0.5) * self.h
        ys = self.y0 + (self.nrows - np.arange(self.nrows) - 0.5) * self.h
        return xs, ys


def grid_for_window(window: Window, n: int = DEFAULT_GRID_SIZE,
                    cell_size: Optional[float] = None) -> Grid:
    """Grid covering the window's bounding box, ``n`` cells along the longer side."""
    x0, x1, y0, y1 = window.bbox
    h = cell_size if cell_size is not None else max(x1 - x0, y1 - y0) / n
    ncols = max(2, int(np.ceil((x1 - x0) / h - 1e-9)))
    nrows = max(2, int(np.ceil((y1 - y0) / h - 1e-9)))
    return Grid(x0, y0, h, ncols, nrows)


@dataclass(frozen=True, eq=False)
class CovariateField:
    """Gridded field values, row 0 northmost, evaluated at cell centres."""

    grid: Grid
    values: np.ndarray
    window: Optional[Window] = None
    _south: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.grid.nrows, self.grid.ncols):
            raise GeometryMismatchError(
                f"values shape {v.shape} does not match grid "
                f"{(self.grid.nrows, self.grid.ncols)}")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "_south", np.ascontiguousarray(v[::-1]))
        if self.window is None:
            g = self.grid
            object.__setattr__(self, "window", RectWindow(g.x0, g.x1, g.y0, g.y1))

    def __call__(self, xy):
        return eval_field(self, xy)


def eval_field(field: CovariateField, u):
    """Bilinear interpolation between the four surrounding cell centres.

    Points between the outermost centres and the grid edge take the value of
    the nearest centre row/column.
    """
    g = field.grid
    xy = np.asarray(u, dtype=float)
    x, y = xy[..., 0], xy[..., 1]
    slack = 1e-9 * g.h
    if np.any((x < g.x0 - slack) | (x > g.x1 + slack)
               | (y < g.y0 - slack) | (y > g.y1 + slack)):
        raise OutOfRangeError("evaluation point outside grid coverage")
    cx = np.clip((x - g.x0) / g.h - 0.5, 0.0, g.ncols - 1)
    cy = np.clip((y - g.y0) / g.h - 0.5, 0.0, g.nrows - 1)
    j0 = np.minimum(np.floor(cx).astype(np.intp), max(g.ncols - 2, 0))
    i0 = np.minimum(np.floor(cy).astype(np.intp), max(g.nrows - 2, 0))
    j1 = np.minimum(j0 + 1, g.ncols - 1)
    i1 = np.minimum(i0 + 1, g.nrows - 1)
    fx = cx - j0
    fy = cy - i0
    v = field._south
    out = ((1.0 - fx) * (1.0 - fy) * v[i0, j0] + fx * (1.0 - fy) * v[i0, j1]
           + (1.0 - fx) * fy * v[i1, j0] + fx * fy * v[i1, j1])
    return float(out) if out.ndim == 0 else out


@lru_cache(maxsize=64)
def _embedding_sqrt_eigs(family: str, scale: float, variance: float,
                         h: float, nrows: int, ncols: int) -> np.ndarray:
    model = CorrelationModel(family, scale)
    for fac in EMBED_FACTORS:
        m, n = fac * nrows, fac * ncols
        ky = np.minimum(np.arange(m), m - np.arange(m)) * h
        kx = np.minimum(np.arange(n), n - np.arange(n)) * h
        r = np.hypot(ky[:, None], kx[None, :])
        base = variance * correlation(model, r)
        eig = np.fft.fft2(base).real
        top = eig.max()
        if eig.min() >= -NEG_EIG_TOL * top:
            eig = np.clip(eig, 0.0, None)
            out = np.sqrt(eig / (m * n))
            out.setflags(write=False)
            return out
    raise SimulationError(
        f"circulant embedding not positive semidefinite for {family} "
        f"scale {scale} on a {nrows}x{ncols} grid")


def _as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def simulate_grf_many(spec: FieldSpec, grid: Grid, seed, count: int,
                      window: Optional[Window] = None) -> list[CovariateField]:
    """``count`` independent realisations sharing one random stream.

    Each complex FFT yields two independent real fields (real and imaginary
    parts), so fields are produced in pairs.
    """
    if grid.nrows < 2 or grid.ncols < 2:
        raise ValueError("grid must be at least 2x2")
    if spec.variance == 0:
        const = np.full((grid.nrows, grid.ncols), float(spec.mean))
        return [CovariateField(grid, const.copy(), window) for _ in range(count)]
    rng = _as_rng(seed)
    c = spec.correlation
    lam = _embedding_sqrt_eigs(c.family, float(c.scale), float(spec.variance),
                               float(grid.h), grid.nrows, grid.ncols)
    out = []
    while len(out) < count:
        noise = rng.standard_normal((2,) + lam.shape)
        y = np.fft.fft2(lam * (noise[0] + 1j * noise[1]))
        block = y[:grid.nrows, :grid.ncols]
        out.append(CovariateField(grid, spec.mean + block.real, window))
        if len(out) < count:
            out.append(CovariateField(grid, spec.mean + block.imag, window))
    return out


def simulate_grf(spec: FieldSpec, grid: Grid, seed,
                 window: Optional[Window] = None) -> CovariateField:
    """One realisation of a stationary Gaussian field at the grid-cell centres."""
    return simulate_grf_many(spec, grid, seed, 1, window)[0]


@dataclass(frozen=True)
class FieldTransform:
    """Pointwise combination of gridded fields.

    kind ``linear``: ``sum_k w_k Z_k + offset``.
    kind ``square``: ``(sum_k w_k Z_k)**2 + offset``.
    kind ``neg_square_shift``: ``-w_0 Z_0**2 + sum_{k>=1} w_k Z_k + offset``.
    """

    kind: str
    weights: tuple = (1.0,)
    offset: float = 0.0

    def __post_init__(self):
        if self.kind not in ("linear", "square", "neg_square_shift"):
            raise ValueError(f"unknown transform kind {self.kind!r}")
        if len(self.weights) == 0 or not np.all(np.isfinite(self.weights)):
            raise ValueError("transform needs finite weights")


def transform_fields(inputs: Sequence[CovariateField], t: FieldTransform) -> CovariateField:
    if len(inputs) == 0:
        raise ValueError("need at least one input field")
    if len(inputs) != len(t.weights):
        raise ValueError(f"{len(t.weights)} weights for {len(inputs)} fields")
    g = inputs[0].grid
    for f in inputs[1:]:
        if f.grid != g:
            raise GeometryMismatchError("input fields have different grids")
    vals = [f.values for f in inputs]
    w = t.weights
    if t.kind == "linear":
        out = sum(wk * v for wk, v in zip(w, vals)) + t.offset
    elif t.kind == "square":
        out = sum(wk * v for wk, v in zip(w, vals)) ** 2 + t.offset
    else:
        out = -w[0] * vals[0] ** 2 + t.offset
        for wk, v in zip(w[1:], vals[1:]):
            out = out + wk * v
    return CovariateField(g, out, inputs[0].window)
