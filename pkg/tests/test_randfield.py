import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rshift.errors import GeometryMismatchError, OutOfRangeError
from rshift.geometry import RectWindow
from rshift.randfield import (CorrelationModel, CovariateField, FieldSpec, FieldTransform,
                              Grid, correlation, eval_field, grid_for_window,
                              simulate_grf, simulate_grf_many, transform_fields)

EXP02 = CorrelationModel("exponential", 0.2)
UNIT_SPEC = FieldSpec(0.0, 1.0, EXP02)


def test_correlation_examples():
    assert correlation(EXP02, 0.0) == 1.0
    assert correlation(EXP02, 0.2) == pytest.approx(math.exp(-1), abs=1e-12)
    assert correlation(CorrelationModel("spherical", 0.05), 0.05) == 0.0


def test_correlation_negative_lag():
    with pytest.raises(ValueError):
        correlation(EXP02, -0.1)


@given(st.floats(0.0, 10.0), st.floats(0.01, 2.0))
def test_spherical_zero_beyond_support(k, phi):
    sph = CorrelationModel("spherical", phi)
    assert correlation(sph, phi * (1.0 + k)) == 0.0


def test_spherical_formula():
    sph = CorrelationModel("spherical", 2.0)
    assert correlation(sph, 1.0) == pytest.approx(1 - 0.75 + 0.0625)


def test_zero_variance_field_is_constant():
    g = grid_for_window(RectWindow(0, 1, 0, 1), 16)
    f = simulate_grf(FieldSpec(3.5, 0.0, EXP02), g, 1)
    assert np.all(f.values == 3.5)


def test_same_seed_bit_identical():
    g = grid_for_window(RectWindow(0, 1, 0, 1), 64)
    a = simulate_grf(UNIT_SPEC, g, 123).values
    b = simulate_grf(UNIT_SPEC, g, 123).values
    assert a.tobytes() == b.tobytes()
    c = simulate_grf(UNIT_SPEC, g, 124).values
    assert not np.array_equal(a, c)


def test_spherical_embedding_succeeds():
    g = grid_for_window(RectWindow(0, 1, 0, 1), 64)
    f = simulate_grf(FieldSpec(0.0, 1.0, CorrelationModel("spherical", 0.05)), g, 5)
    assert np.all(np.isfinite(f.values))


def _mc_fields(n_seeds, n_cells):
    g = Grid(0.0, 0.0, 1.0 / n_cells, n_cells, n_cells)
    return np.stack([simulate_grf(UNIT_SPEC, g, s).values for s in range(n_seeds)])


def test_variance_and_lag_correlation_monte_carlo():
    # 100 x 100 grid: a lag of 20 cells is exactly 0.2
    v = _mc_fields(2000, 100)
    a = v[:, 50, 30]
    b = v[:, 50, 50]
    assert 0.94 <= a.var(ddof=1) <= 1.06
    assert abs(np.corrcoef(a, b)[0, 1] - math.exp(-1)) <= 0.05


def test_mean_over_seeds():
    g = grid_for_window(RectWindow(0, 1, 0, 1), 128)
    means = [f.values.mean() for f in simulate_grf_many(UNIT_SPEC, g, 99, 500)]
    assert abs(np.mean(means)) <= 0.02


def test_equal_weight_sum_has_unit_variance():
    g = Grid(0.0, 0.0, 1 / 32, 32, 32)
    a = 1 / math.sqrt(2)
    out = []
    for s in range(600):
        z1, z2 = simulate_grf_many(UNIT_SPEC, g, s, 2)
        out.append(transform_fields([z1, z2], FieldTransform("linear", (a, a))).values[10, 10])
    assert abs(np.var(out, ddof=1) - 1.0) <= 0.06


def _tiny(values, h=0.5):
    v = np.asarray(values, dtype=float)
    return CovariateField(Grid(0.0, 0.0, h, v.shape[1], v.shape[0]), v)


def test_eval_cell_centres_and_midpoint():
    f = _tiny([[0.0, 1.0], [0.0, 1.0]])
    assert eval_field(f, (0.25, 0.75)) == 0.0
    assert eval_field(f, (0.75, 0.25)) == 1.0
    assert eval_field(f, (0.5, 0.5)) == pytest.approx(0.5)


def test_eval_row_zero_is_north():
    f = _tiny([[1.0, 2.0], [3.0, 4.0]])
    assert eval_field(f, (0.25, 0.75)) == 1.0
    assert eval_field(f, (0.25, 0.25)) == 3.0


@given(st.floats(-5, 5), st.floats(0, 1), st.floats(0, 1))
def test_eval_constant_grid(c, x, y):
    f = _tiny(np.full((4, 4), c), h=0.25)
    assert eval_field(f, (x, y)) == pytest.approx(c, abs=1e-12)


def test_eval_outside_coverage():
    with pytest.raises(OutOfRangeError):
        eval_field(_tiny([[1.0, 2.0], [3.0, 4.0]]), (1.5, 0.5))


def test_eval_vectorized_matches_scalar():
    rng = np.random.default_rng(0)
    f = _tiny(rng.normal(size=(8, 8)), h=0.125)
    pts = rng.random((50, 2))
    vec = eval_field(f, pts)
    assert np.allclose(vec, [eval_field(f, p) for p in pts])


def test_transform_examples():
    g = Grid(0.0, 0.0, 0.5, 2, 2)
    za = CovariateField(g, np.array([[1.0, -2.0], [3.0, 4.0]]))
    zb = CovariateField(g, np.array([[9.0, 9.0], [9.0, 9.0]]))
    same = transform_fields([za, zb], FieldTransform("linear", (1.0, 0.0)))
    assert np.array_equal(same.values, za.values)
    a = 1 / math.sqrt(2)
    doubled = transform_fields([za, za], FieldTransform("linear", (a, a)))
    assert np.allclose(doubled.values, math.sqrt(2) * za.values)
    sq = transform_fields([za], FieldTransform("square", (1.0,)))
    assert sq.values[0, 1] == 4.0


def test_neg_square_shift():
    g = Grid(0.0, 0.0, 0.5, 2, 2)
    z0 = CovariateField(g, np.full((2, 2), 2.0))
    z1 = CovariateField(g, np.full((2, 2), 3.0))
    out = transform_fields([z0, z1], FieldTransform("neg_square_shift", (0.5, 1.0), 1.0))
    assert np.allclose(out.values, -0.5 * 4 + 3 + 1)


def test_transform_grid_mismatch():
    a = CovariateField(Grid(0.0, 0.0, 0.5, 2, 2), np.zeros((2, 2)))
    b = CovariateField(Grid(0.0, 0.0, 0.25, 4, 4), np.zeros((4, 4)))
    with pytest.raises(GeometryMismatchError):
        transform_fields([a, b], FieldTransform("linear", (1.0, 1.0)))
