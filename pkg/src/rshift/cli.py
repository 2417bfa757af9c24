"""Command-line entry point and file formats.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
Errors print one line ``rshift: error[<code>]: <message>`` on stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import warnings
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import experiments
from .errors import ConfigError, ParseError, RShiftError, ValidationError
from .geometry import MarkedPointPattern, PolygonWindow, RectWindow, Window
from .procgen import ModelSpec, generate_model
from .randfield import CovariateField, Grid
from .shifttest import (ShiftDistribution, TestConfig, TestResult,
                        bonferroni_combine, run_shift_test, schlather_test)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
GRID_KEYS = ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize")


class UsageError(Exception):
    pass


# -- points ----------------------------------------------------------------

def parse_window(spec: str) -> Optional[Window]:
    """``bbox`` -> None, ``x0,x1,y0,y1`` -> rectangle, otherwise a vertex CSV path."""
    if spec == "bbox":
        return None
    parts = spec.split(",")
    if len(parts) == 4:
        try:
            return RectWindow(*map(float, parts))
        except ValueError:
            pass
    path = Path(spec)
    if not path.exists():
        raise ParseError(f"window {spec!r} is neither x0,x1,y0,y1 nor a vertex file")
    verts = []
    with path.open(encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    for lineno, row in enumerate(rows, start=1):
        if not row or (lineno == 1 and row[0].strip().lower() == "x"):
            continue
        try:
            verts.append((float(row[0]), float(row[1])))
        except (ValueError, IndexError):
            raise ParseError(f"{path}: line {lineno}: bad vertex {row!r}") from None
    return PolygonWindow(tuple(verts))


def _level_key(label):
    # numeric labels first, in numeric order, then strings
    return (1, 0, label) if isinstance(label, str) else (0, label, "")


def parse_points(path, window: Optional[Window] = None, marks: str = "auto",
                 allow_bbox: bool = True) -> MarkedPointPattern:
    """Read an ``x,y[,mark]`` CSV into a pattern.

    Unquoted marks are numeric and quoted ones are category labels;
    ``marks="categorical"`` forces category treatment of numeric codes.
    """
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines:
        raise ParseError(f"{path}: empty file")
    header = [h.strip().strip('"').lower() for h in lines[0].split(",")]
    if header not in (["x", "y"], ["x", "y", "mark"]):
        raise ParseError(f"{path}: line 1: header must be x,y or x,y,mark")
    has_marks = len(header) == 3
    xy, raw = [], []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            row = next(csv.reader([line], quoting=csv.QUOTE_NONNUMERIC))
        except ValueError as exc:
            raise ParseError(f"{path}: line {lineno}: {exc}") from None
        if len(row) != len(header) or not all(isinstance(v, float) for v in row[:2]):
            raise ParseError(f"{path}: line {lineno}: expected {len(header)} fields "
                             f"with numeric coordinates")
        xy.append(row[:2])
        if has_marks:
            raw.append(row[2])
    xy = np.array(xy, dtype=float).reshape(-1, 2)
    if window is None:
        if not allow_bbox:
            raise ValidationError("a window is required (pass --window or --window=bbox)")
        if len(xy) == 0:
            raise ValidationError("cannot derive a bounding box from an empty pattern")
        warnings.warn("no window given; using the bounding box of the points")
        window = RectWindow(xy[:, 0].min(), xy[:, 0].max(), xy[:, 1].min(), xy[:, 1].max())
    if not has_marks:
        return MarkedPointPattern(xy, window)
    categorical = marks == "categorical" or (marks == "auto" and any(isinstance(v, str) for v in raw))
    if not categorical:
        if any(isinstance(v, str) for v in raw):
            raise ParseError(f"{path}: quoted marks cannot be read as numeric")
        return MarkedPointPattern(xy, window, np.array(raw, dtype=float), "numeric")
    labels = [int(v) if isinstance(v, float) and v.is_integer() else v for v in raw]
    levels = tuple(sorted(set(labels), key=_level_key))
    code = {lab: i + 1 for i, lab in enumerate(levels)}
    return MarkedPointPattern(xy, window, np.array([code[v] for v in labels]),
                              "categorical", levels)


def write_points(pattern: MarkedPointPattern, path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n", quoting=csv.QUOTE_MINIMAL)
        if pattern.marks is None:
            fh.write("x,y\n")
            for x, y in pattern.xy:
                fh.write(f"{x!r},{y!r}\n")
            return
        fh.write("x,y,mark\n")
        for (x, y), m in zip(pattern.xy.tolist(), pattern.marks.tolist()):
            if pattern.mark_kind == "categorical":
                lab = pattern.levels[m - 1]
                fh.write(f'{x!r},{y!r},"{lab}"\n')
            else:
                fh.write(f"{x!r},{y!r},{m!r}\n")


# -- grids -----------------------------------------------------------------

def parse_grid(path, window: Optional[Window] = None) -> CovariateField:
    """Read an ASCII grid; values refer to cell centres, first data row is north."""
    path = Path(path)
    tokens_by_line = [ln.split() for ln in path.read_text(encoding="utf-8").splitlines()]
    header, i = {}, 0
    while i < len(tokens_by_line):
        toks = tokens_by_line[i]
        if not toks:
            i += 1
            continue
        try:
            float(toks[0])
            break
        except ValueError:
            pass
        if len(toks) != 2:
            raise ParseError(f"{path}: line {i + 1}: header lines are 'KEY value'")
        header[toks[0].lower()] = toks[1]
        i += 1
    missing = [k.upper() for k in GRID_KEYS if k not in header]
    if missing:
        raise ParseError(f"{path}: header missing {', '.join(missing)}")
    try:
        ncols, nrows = int(header["ncols"]), int(header["nrows"])
        x0, y0 = float(header["xllcorner"]), float(header["yllcorner"])
        h = float(header["cellsize"])
        nodata = float(header["nodata_value"]) if "nodata_value" in header else None
    except ValueError as exc:
        raise ParseError(f"{path}: bad header value: {exc}") from None
    if ncols < 1 or nrows < 1 or not h > 0:
        raise ParseError(f"{path}: grid dimensions and cell size must be positive")
    try:
        vals = np.array([float(t) for toks in tokens_by_line[i:] for t in toks])
    except ValueError as exc:
        raise ParseError(f"{path}: bad grid value: {exc}") from None
    if vals.size != ncols * nrows:
        raise ParseError(f"{path}: expected {ncols * nrows} values, found {vals.size}")
    vals = vals.reshape(nrows, ncols)
    grid = Grid(x0, y0, h, ncols, nrows)
    win = window if window is not None else RectWindow(x0, grid.x1, y0, grid.y1)
    if nodata is not None:
        bad = vals == nodata
        if np.any(bad & _cells_used_by(grid, win)):
            raise ValidationError(f"{path}: NODATA cells inside the window")
        vals = np.where(bad, np.nan, vals)
    if np.any(~np.isfinite(vals) & _cells_used_by(grid, win)):
        raise ValidationError(f"{path}: non-finite values inside the window")
    return CovariateField(grid, vals, win)


def _cells_used_by(grid: Grid, window: Window) -> np.ndarray:
    """Cells that bilinear evaluation inside ``window`` can touch (north-first mask)."""
    xs, ys = grid.centers()
    h = grid.h
    mask = np.zeros((grid.nrows, grid.ncols), dtype=bool)
    for dx in (-0.5, 0.0, 0.5):
        for dy in (-0.5, 0.0, 0.5):
            pts = np.stack(np.meshgrid(xs + dx * h, ys + dy * h), axis=-1)
            mask |= window.contains(pts)
    grow = mask.copy()
    grow[1:] |= mask[:-1]
    grow[:-1] |= mask[1:]
    grow2 = grow.copy()
    grow2[:, 1:] |= grow[:, :-1]
    grow2[:, :-1] |= grow[:, 1:]
    return grow2


def write_grid(field: CovariateField, path, nodata: float = -9999.0) -> None:
    g = field.grid
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write(f"NCOLS {g.ncols}\nNROWS {g.nrows}\nXLLCORNER {g.x0!r}\n"
                 f"YLLCORNER {g.y0!r}\nCELLSIZE {g.h!r}\nNODATA_VALUE {nodata!r}\n")
        for row in field.values:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


# -- results ---------------------------------------------------------------

def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, np.generic):
        return x.item()
    return x


def result_to_dict(result: TestResult, verbose: bool = False) -> dict:
    d = {"test": result.test, "statistic": result.statistic,
         "correction": result.correction, "n_shifts": result.n_shifts,
         "seed": result.seed, "t0": _jsonable(result.t0),
         "p_value": result.p_value, "n_retained_summary": result.retained_summary(),
         "sidedness": result.sidedness, "shift": result.shift}
    if verbose:
        d["replicates"] = _jsonable(result.replicates)
    if result.envelope is not None:
        d["envelope"] = result.envelope.to_dict()
    return d


def dump_result(d: dict) -> str:
    return json.dumps(d, indent=2, sort_keys=True) + "\n"


def load_result(path) -> dict:
    d = json.loads(Path(path).read_text(encoding="utf-8"))
    if not 0.0 < d.get("p_value", -1) <= 1.0:
        raise ValidationError(f"{path}: p_value outside (0, 1]")
    return d


# -- argument parsing ------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")

    def exit(self, status=0, message=None):
        if status:
            raise UsageError(message or "")
        if message:
            sys.stdout.write(message)
        raise SystemExit(0)


def read_config_file(path) -> dict:
    """``key = value`` lines; ``#`` starts a comment; keys may use dashes."""
    cfg = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}: line {lineno}: expected key = value")
        k, v = (s.strip() for s in line.split("=", 1))
        cfg[k.replace("-", "_")] = v
    return cfg


def _csv_floats(s: str) -> tuple:
    return tuple(float(x) for x in s.split(",") if x.strip())


def _csv_strs(s: str) -> tuple:
    return tuple(x.strip() for x in s.split(",") if x.strip())


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="key = value file mirroring the flags")

    p = _Parser(prog="rshift", description="Random-shift tests for marked point patterns.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    t = sub.add_parser("test", parents=[common], help="run a test on data files")
    t.add_argument("which", choices=("pc", "pmc", "pm"))
    t.add_argument("--points", required=True)
    t.add_argument("--grid", "--grids", dest="grid", action="append", default=None)
    t.add_argument("--window", default=None,
                   help="x0,x1,y0,y1 | vertex CSV path | bbox (default: extent of the first grid)")
    t.add_argument("--marks", choices=("auto", "numeric", "categorical"), default="auto")
    t.add_argument("--correction", choices=("torus", "variance"), default="variance")
    t.add_argument("--stat", choices=("mean", "cov", "pearson", "kendall"), default=None)
    t.add_argument("--nshifts", type=int, default=999)
    t.add_argument("--nsims", type=int, default=99)
    t.add_argument("--shift-radius", type=float, default=None)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--level", type=float, default=0.05)
    t.add_argument("--out")
    t.add_argument("--verbose", action="store_true")

    s = sub.add_parser("simulate", parents=[common], help="simulate a model scene")
    s.add_argument("what", choices=("model",))
    s.add_argument("model")
    s.add_argument("--alpha", type=float, default=0.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--grid-size", type=int, default=128)
    s.add_argument("--out-points", required=True)
    s.add_argument("--out-grid", required=True)
    s.add_argument("--out-mark-grid")

    st = sub.add_parser("study", parents=[common], help="run a simulation study")
    st.add_argument("study_kind", choices=experiments.STUDY_KINDS)
    st.add_argument("--reps", type=int, default=None)
    st.add_argument("--nshifts", type=int, default=None)
    st.add_argument("--level", type=float, default=0.05)
    st.add_argument("--seed", type=int, default=2021)
    st.add_argument("--workers", type=int, default=None)
    st.add_argument("--tests", type=_csv_strs, default=None)
    st.add_argument("--models", type=_csv_strs, default=None)
    st.add_argument("--alphas", type=_csv_floats, default=None)
    st.add_argument("--kind", choices=experiments.VARIANCE_KINDS, default="pc")
    st.add_argument("--scales", type=_csv_floats, default=None)
    st.add_argument("--sides", type=_csv_floats, default=None)
    st.add_argument("--out-dir")
    st.add_argument("--cache-dir")
    st.add_argument("--full-scale", action="store_true")

    c = sub.add_parser("combine", parents=[common], help="combine p-values")
    c.add_argument("--bonferroni", action="store_true", required=True)
    c.add_argument("pvalues", nargs="+", type=float)
    return p


_BOOL = {"true": True, "yes": True, "1": True, "false": False, "no": False, "0": False}


def _apply_config(parser: argparse.ArgumentParser, argv: Sequence[str]) -> None:
    if "--config" not in argv and not any(a.startswith("--config=") for a in argv):
        return
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    cfg = read_config_file(known.config)
    subs = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    for sp in subs.choices.values():
        dests = {a.dest: a for a in sp._actions}
        vals = {}
        for k, v in cfg.items():
            if k not in dests:
                continue
            act = dests[k]
            if isinstance(act, argparse._StoreTrueAction):
                vals[k] = _BOOL.get(v.lower(), bool(v))
            elif isinstance(act, argparse._AppendAction):
                vals[k] = _csv_strs(v)
            elif act.type is not None:
                vals[k] = act.type(v)
            else:
                vals[k] = v
            act.required = False
        sp.set_defaults(**vals)


def _cmd_test(args) -> int:
    if args.window is not None:
        window = parse_window(args.window)
    elif args.grid:
        window = parse_grid(args.grid[0]).window
    else:
        raise UsageError("--window is required when no --grid is given")
    pattern = parse_points(args.points, window, args.marks)
    grids = [parse_grid(g, pattern.window) for g in (args.grid or [])]
    shift = ShiftDistribution.uniform_disc(args.shift_radius) if args.shift_radius else None
    if args.which == "pm":
        if pattern.mark_kind != "numeric":
            raise ValidationError("pm test needs numeric marks")
        res = schlather_test(pattern, n_sims=args.nsims, seed=args.seed)
    else:
        if not grids:
            raise ValidationError(f"{args.which} test needs at least one --grid")
        if args.which == "pc":
            stat = "multicovariate" if len(grids) > 1 else (args.stat or "mean")
            if stat not in ("mean", "multicovariate"):
                raise ValidationError("pc test uses the mean statistic")
        elif pattern.mark_kind == "categorical":
            stat = "multitype"
        elif pattern.mark_kind == "numeric":
            stat = args.stat or "kendall"
            if stat == "mean" or len(grids) > 1:
                raise ValidationError("numeric-mark pmc test takes one grid and cov|pearson|kendall")
        else:
            raise ValidationError("pmc test needs marked points")
        cfg = TestConfig(n_shifts=args.nshifts, correction=args.correction, statistic=stat,
                         shift=shift, seed=args.seed)
        res = run_shift_test(pattern, grids, cfg, name=args.which, level=args.level)
    text = dump_result(result_to_dict(res, args.verbose))
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        print(f"p-value {res.p_value:.6g} written to {args.out}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _cmd_simulate(args) -> int:
    scene = generate_model(ModelSpec(args.model, args.alpha, args.seed), args.grid_size)
    write_points(scene.pattern, args.out_points)
    write_grid(scene.covariate, args.out_grid)
    if args.out_mark_grid:
        write_grid(scene.mark_field, args.out_mark_grid)
    print(f"{args.model}: {len(scene.pattern)} points")
    return EXIT_OK


def _cmd_study(args) -> int:
    kw = dict(kind=args.study_kind, level=args.level, seed=args.seed,
              workers=args.workers or experiments.default_workers(),
              variance_kind=args.kind)
    if args.tests:
        kw["tests"] = args.tests
    if args.models:
        kw["models"] = args.models
    if args.alphas:
        kw["alphas"] = args.alphas
    if args.scales:
        kw["scales"] = args.scales
    if args.sides:
        kw["sides"] = args.sides
    if args.nshifts:
        kw["n_shifts"] = args.nshifts
    if args.reps:
        kw["n_replications"] = args.reps
    elif args.study_kind == "variance-order":
        kw["n_replications"] = 5000 if args.full_scale else 2000
    cfg = experiments.StudyConfig.full_scale(**kw) if args.full_scale else experiments.StudyConfig(**kw)
    result = experiments.run_study(cfg, args.out_dir, args.cache_dir)
    if args.out_dir:
        print(f"study written to {args.out_dir}")
    if isinstance(result, experiments.RejectionTable) and not args.out_dir:
        print(result.format())
    elif not args.out_dir:
        sys.stdout.write(result.to_csv())
    return EXIT_OK


def _cmd_combine(args) -> int:
    print(repr(bonferroni_combine(args.pvalues)))
    return EXIT_OK


def cli_dispatch(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
        args = parser.parse_args(argv)
    except UsageError as exc:
        msg = " ".join(str(exc).split())
        print(f"rshift: error[usage]: {msg}", file=sys.stderr)
        return EXIT_USAGE
    except RShiftError as exc:
        print(f"rshift: error[{exc.code}]: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"rshift: error[io]: {exc}", file=sys.stderr)
        return EXIT_USAGE
    handler = {"test": _cmd_test, "simulate": _cmd_simulate,
               "study": _cmd_study, "combine": _cmd_combine}[args.command]
    try:
        return handler(args)
    except UsageError as exc:
        print(f"rshift: error[usage]: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except RShiftError as exc:
        print(f"rshift: error[{exc.code}]: {' '.join(str(exc).split())}", file=sys.stderr)
        return EXIT_NUMERIC if exc.kind == "numeric" else EXIT_DATA
    except OSError as exc:
        print(f"rshift: error[io]: {' '.join(str(exc).split())}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"rshift: error[data]: {' '.join(str(exc).split())}", file=sys.stderr)
        return EXIT_DATA
    except ArithmeticError as exc:
        print(f"rshift: error[numeric]: {' '.join(str(exc).split())}", file=sys.stderr)
        return EXIT_NUMERIC


def main() -> None:
    sys.exit(cli_dispatch())
