"""Observation windows, marked point patterns and the two shift mechanics."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .errors import InvalidWindowError, TorusUnsupportedError, ValidationError

EDGE_TOL = 1e-12


@dataclass(frozen=True)
class RectWindow:
    """Closed axis-aligned rectangle ``[x0, x1] x [y0, y1]``."""

    x0: float
    x1: float
    y0: float
    y1: float

    def __post_init__(self):
        vals = (self.x0, self.x1, self.y0, self.y1)
        if not all(np.isfinite(v) for v in vals):
            raise InvalidWindowError("rectangle bounds must be finite")
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise InvalidWindowError(
                f"rectangle needs x0 < x1 and y0 < y1, got {vals}")

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0

    @property
    def bbox(self) -> tuple[float, float, float, float]:
        return (self.x0, self.x1, self.y0, self.y1)

    @property
    def area(self) -> float:
        return self.width * self.height

    def contains(self, xy) -> np.ndarray:
        xy = np.asarray(xy, dtype=float)
        x, y = xy[..., 0], xy[..., 1]
        return (x >= self.x0) & (x <= self.x1) & (y >= self.y0) & (y <= self.y1)

    def to_polygon(self) -> "PolygonWindow":
        return PolygonWindow(((self.x0, self.y0), (self.x1, self.y0),
                              (self.x1, self.y1), (self.x0, self.y1)))


@dataclass(frozen=True)
class PolygonWindow:
    """Simple polygon given by its ordered vertices (closing edge implied)."""

    vertices: tuple

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or len(v) < 3:
            raise InvalidWindowError("polygon needs at least 3 (x, y) vertices")
        if np.allclose(v[0], v[-1]) and len(v) > 3:
            v = v[:-1]
        if not np.all(np.isfinite(v)):
            raise InvalidWindowError("polygon vertices must be finite")
        object.__setattr__(self, "vertices", tuple(map(tuple, v.tolist())))
        if self.area <= 0.0:
            raise InvalidWindowError("degenerate polygon (zero area)")

    @property
    def _v(self) -> np.ndarray:
        return np.asarray(self.vertices, dtype=float)

    @property
    def area(self) -> float:
        v = self._v
        x, y = v[:, 0], v[:, 1]
        return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))

    @property
    def bbox(self) -> tuple[float, float, float, float]:
        v = self._v
        return (float(v[:, 0].min()), float(v[:, 0].max()),
                float(v[:, 1].min()), float(v[:, 1].max()))

    @property
    def width(self) -> float:
        b = self.bbox
        return b[1] - b[0]

    @property
    def height(self) -> float:
        b = self.bbox
        return b[3] - b[2]

    def contains(self, xy) -> np.ndarray:
        xy = np.asarray(xy, dtype=float)
        shape = xy.shape[:-1]
        p = xy.reshape(-1, 2)
        px, py = p[:, :1], p[:, 1:]
        a = self._v
        b = np.roll(a, -1, axis=0)
        ax, ay, bx, by = a[:, 0], a[:, 1], b[:, 0], b[:, 1]

        # even-odd ray casting towards +x
        straddle = (ay > py) != (by > py)
        with np.errstate(divide="ignore", invalid="ignore"):
            xcross = ax + (py - ay) * (bx - ax) / (by - ay)
        inside = (np.count_nonzero(straddle & (px < xcross), axis=1) % 2) == 1

        # distance to each edge; boundary counts as inside
        ex, ey = bx - ax, by - ay
        len2 = ex * ex + ey * ey
        t = np.clip(((px - ax) * ex + (py - ay) * ey) / len2, 0.0, 1.0)
        dx = px - (ax + t * ex)
        dy = py - (ay + t * ey)
        on_edge = np.any(dx * dx + dy * dy <= EDGE_TOL ** 2, axis=1)
        return (inside | on_edge).reshape(shape)


Window = Union[RectWindow, PolygonWindow]


def area(window: Window) -> float:
    return window.area


def contains(window: Window, u) -> Union[bool, np.ndarray]:
    """Closed-region membership; accepts one point or an ``(n, 2)`` array."""
    res = window.contains(u)
    return bool(res) if np.ndim(res) == 0 else res


@dataclass(frozen=True)
class MarkedPointPattern:
    """Points in a window, optionally carrying numeric or categorical marks.

    Categorical marks are stored as integer codes ``1..M``; ``levels`` keeps the
    original labels in code order.
    """

    xy: np.ndarray
    window: Window
    marks: Optional[np.ndarray] = None
    mark_kind: Optional[str] = None
    levels: Optional[tuple] = None
    check: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        xy = np.asarray(self.xy, dtype=float).reshape(-1, 2)
        object.__setattr__(self, "xy", xy)
        marks = self.marks
        kind = self.mark_kind
        if marks is not None:
            marks = np.asarray(marks)
            if len(marks) != len(xy):
                raise ValidationError(
                    f"{len(marks)} marks for {len(xy)} points")
            if kind is None:
                kind = "numeric"
            if kind == "numeric":
                marks = marks.astype(float)
            elif kind == "categorical":
                marks = marks.astype(np.int64)
                if self.levels is None:
                    object.__setattr__(
                        self, "levels", tuple(range(1, int(marks.max(initial=0)) + 1)))
            else:
                raise ValidationError(f"unknown mark kind {kind!r}")
            object.__setattr__(self, "marks", marks)
        else:
            kind = None
        object.__setattr__(self, "mark_kind", kind)
        if self.check:
            if not np.all(np.isfinite(xy)):
                raise ValidationError("non-finite coordinates")
            if len(xy) and not np.all(self.window.contains(xy)):
                bad = int(np.argmin(self.window.contains(xy)))
                raise ValidationError(
                    f"point {bad} at {tuple(xy[bad])} lies outside the window")
            if kind == "categorical" and len(marks):
                codes = np.unique(marks)
                m = len(self.levels)
                if codes.min() < 1 or codes.max() > m:
                    raise ValidationError(
                        f"categorical codes must lie in 1..{m}")

    def __len__(self) -> int:
        return len(self.xy)

    @property
    def n_levels(self) -> int:
        return len(self.levels) if self.mark_kind == "categorical" else 0

    def subset(self, keep) -> "MarkedPointPattern":
        marks = None if self.marks is None else self.marks[keep]
        return MarkedPointPattern(self.xy[keep], self.window, marks,
                                  self.mark_kind, self.levels, check=False)

    def with_points(self, xy) -> "MarkedPointPattern":
        return MarkedPointPattern(xy, self.window, self.marks, self.mark_kind,
                                  self.levels, check=False)


def _require_rect(window: Window) -> RectWindow:
    if not isinstance(window, RectWindow):
        raise TorusUnsupportedError(
            "torus correction requires a rectangular window")
    return window


def torus_wrap(xy: np.ndarray, window: RectWindow, v) -> np.ndarray:
    """Translate coordinates by ``v`` with opposite window edges identified.

    Broadcasts: ``xy`` of shape ``(n, 2)`` and ``v`` of shape ``(2,)`` or
    ``(k, 1, 2)`` give ``(n, 2)`` or ``(k, n, 2)``.
    """
    w = _require_rect(window)
    v = np.asarray(v, dtype=float)
    origin = np.array([w.x0, w.y0])
    period = np.array([w.width, w.height])
    out = np.mod(xy - origin + v, period) + origin
    # np.mod can return the period itself for tiny negative inputs
    return np.where(out >= origin + period, origin, out)


def torus_shift(pattern: MarkedPointPattern, v: Sequence[float]) -> MarkedPointPattern:
    """Shift every point by ``v`` on the torus; count and marks unchanged."""
    if not np.any(np.asarray(v, dtype=float)):
        _require_rect(pattern.window)
        return pattern
    return pattern.with_points(torus_wrap(pattern.xy, pattern.window, v))


def crop_shift(pattern: MarkedPointPattern, v: Sequence[float]) -> MarkedPointPattern:
    """Shift every point by ``v`` and drop those that leave the window."""
    xy = pattern.xy + np.asarray(v, dtype=float)
    keep = pattern.window.contains(xy)
    out = pattern.subset(keep)
    return out.with_points(xy[keep])
