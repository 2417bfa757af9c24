import math

import numpy as np
import pytest

from rshift.errors import ModelError
from rshift.geometry import PolygonWindow, RectWindow
from rshift.procgen import (MODEL_IDS, ModelSpec, generate_model, model_truth,
                            parse_structure, simulate_cox, simulate_poisson)
from rshift.randfield import CovariateField, Grid
from rshift.stats import stat_kendall

E5 = math.exp(5.0)
UNIT = RectWindow(0.0, 1.0, 0.0, 1.0)
SQUARED_MARKS = ("M10", "M12")


def test_poisson_mean_count_unit_square():
    counts = [len(simulate_poisson(100.0, UNIT, s)) for s in range(2000)]
    assert 98.6 <= np.mean(counts) <= 101.4


def test_poisson_mean_count_larger_square():
    w = RectWindow(0, 2, 0, 2)
    counts = [len(simulate_poisson(100.0, w, s)) for s in range(2000)]
    assert abs(np.mean(counts) / 400.0 - 1.0) <= 0.015


def test_poisson_tiny_window_is_empty():
    w = RectWindow(0, 1e-9, 0, 1e-9)
    assert sum(len(simulate_poisson(100.0, w, s)) for s in range(50)) == 0


def test_poisson_polygon_points_inside():
    tri = PolygonWindow(((0, 0), (1, 0), (0, 1)))
    p = simulate_poisson(400.0, tri, 3)
    assert np.all(tri.contains(p.xy))
    assert 100 < len(p) < 300


def test_poisson_rejects_bad_intensity():
    with pytest.raises(ModelError):
        simulate_poisson(0.0, UNIT, 1)


def _constant_log_field(value, n=32):
    g = Grid(0.0, 0.0, 1.0 / n, n, n)
    return CovariateField(g, np.full((n, n), value))


def test_cox_constant_reduces_to_poisson():
    f = _constant_log_field(math.log(50.0))
    counts = [len(simulate_cox(f, UNIT, s)) for s in range(2000)]
    assert abs(np.mean(counts) / 50.0 - 1.0) <= 0.03


def test_cox_thins_to_window():
    f = _constant_log_field(math.log(400.0))
    sub = RectWindow(0.1, 0.35, 0.2, 0.9)
    p = simulate_cox(f, sub, 0)
    assert np.all(sub.contains(p.xy))


def test_cox_zero_area_is_empty():
    f = _constant_log_field(math.log(400.0))
    p = simulate_cox(f, RectWindow(0.5, 0.5 + 1e-12, 0.5, 0.5 + 1e-12), 0)
    assert len(p) == 0


def test_cox_rejects_nonfinite():
    f = _constant_log_field(np.inf)
    with pytest.raises(ModelError):
        simulate_cox(f, UNIT, 0)


def test_model_spec_validation():
    with pytest.raises(ModelError):
        ModelSpec("M13")
    with pytest.raises(ModelError):
        ModelSpec("M9", alpha=1.5)


def test_structure_parsing():
    assert parse_structure("P+M--C--P") == {"P-M": True, "M-C": False, "C-P": False}
    assert parse_structure("P--M+C+P") == {"P-M": False, "M-C": True, "C-P": True}
    assert model_truth("M8") == {"P-M": True, "M-C": True, "C-P": True}
    assert model_truth("M9", 0.0) == {"P-M": False, "M-C": False, "C-P": False}
    assert model_truth("M9", 0.4)["C-P"]


def test_same_seed_same_scene():
    a = generate_model(ModelSpec("M6", seed=17))
    generate_model(ModelSpec("M2", seed=3))
    b = generate_model(ModelSpec("M6", seed=17))
    assert np.array_equal(a.pattern.xy, b.pattern.xy)
    assert np.array_equal(a.pattern.marks, b.pattern.marks)
    assert np.array_equal(a.covariate.values, b.covariate.values)


def test_scene_windows_agree():
    s = generate_model(ModelSpec("M3", seed=1))
    assert s.pattern.window == s.covariate.window
    assert s.pattern.mark_kind == "numeric"


def test_m1_marks_independent_of_covariate():
    taus = []
    for seed in range(500):
        s = generate_model(ModelSpec("M1", seed=seed))
        if len(s.pattern) >= 2:
            taus.append(stat_kendall(s.pattern.marks, s.covariate(s.pattern.xy)))
    assert -0.03 <= np.mean(taus) <= 0.03


def test_m9_alpha0_covariate_independent_of_points():
    vals = [s.covariate(s.pattern.xy).mean()
            for s in (generate_model(ModelSpec("M9", 0.0, seed)) for seed in range(500))]
    assert abs(np.mean(vals)) <= 0.03


@pytest.mark.parametrize("alpha", [1.0])
def test_m10_intensity_standardized(alpha):
    counts = [len(generate_model(ModelSpec("M10", alpha, seed)).pattern) for seed in range(2000)]
    assert abs(np.mean(counts) / E5 - 1.0) <= 0.025


@pytest.fixture(scope="module")
def counts_by_model():
    return {mid: np.array([len(generate_model(ModelSpec(mid, 0.0, 10_000 + s)).pattern)
                           for s in range(200)], dtype=float)
            for mid in MODEL_IDS}


@pytest.mark.parametrize("mid", MODEL_IDS)
def test_marginal_count_matches(counts_by_model, mid):
    counts = counts_by_model[mid]
    se = counts.std(ddof=1) / math.sqrt(len(counts))
    assert abs(counts.mean() - E5) <= 4.0 * se


@pytest.mark.parametrize("mid", ["M1", "M4", "M8", "M10", "M12"])
def test_mark_variance(mid):
    # pooled over many scenes; the spatial mean of one scene varies a lot
    scenes = [generate_model(ModelSpec(mid, 0.0, 20_000 + s), grid_size=64) for s in range(1000)]
    marks = np.concatenate([s.pattern.marks for s in scenes])
    target = 2.0 if mid in SQUARED_MARKS else 1.0
    assert abs(marks.var() / target - 1.0) <= 0.10
