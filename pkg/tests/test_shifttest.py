import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import kstest

from rshift.errors import DegenerateShiftError, TorusUnsupportedError
from rshift.experiments import column_pvalues
from rshift.geometry import MarkedPointPattern, PolygonWindow, RectWindow
from rshift.procgen import ModelSpec, generate_model
from rshift.randfield import CovariateField, Grid
from rshift.shifttest import (ShiftDistribution, TestConfig, bonferroni_combine,
                              draw_shift, global_envelope_test, mc_pvalue,
                              multicovariate_pc_test, multitype_pmc_test, pointwise_ranks,
                              run_shift_test, schlather_test, variance_correct)

UNIT = RectWindow(0.0, 1.0, 0.0, 1.0)


def _grid_field(fn, n=64):
    g = Grid(0.0, 0.0, 1.0 / n, n, n)
    xs, ys = g.centers()
    X, Y = np.meshgrid(xs, ys)
    return CovariateField(g, fn(X, Y))


def test_disc_draws_inside_and_centred():
    d = ShiftDistribution.uniform_disc(0.3)
    rng = np.random.default_rng(0)
    v = np.array([d.sample(rng) for _ in range(100_000)])
    assert np.all(np.hypot(v[:, 0], v[:, 1]) <= 0.3)
    assert np.all(np.abs(v.mean(axis=0)) <= 0.01 * 0.3)


def test_window_draws_in_period():
    d = ShiftDistribution.uniform_window(RectWindow(0, 2, 0, 3))
    v = np.array([draw_shift(d, 4, i) for i in range(2000)])
    assert v[:, 0].min() >= 0 and v[:, 0].max() < 2
    assert v[:, 1].min() >= 0 and v[:, 1].max() < 3


def test_draw_shift_deterministic():
    d = ShiftDistribution.uniform_disc(1.0)
    assert np.array_equal(draw_shift(d, 42, 17), draw_shift(d, 42, 17))
    assert not np.array_equal(draw_shift(d, 42, 17), draw_shift(d, 42, 18))


def test_variance_correct_examples():
    np.testing.assert_allclose(variance_correct([1, 2, 3], [4, 4, 4]), [-2, 0, 2])
    s = variance_correct([1.0, 5.0, 3.0], [2, 7, 9])
    assert s[2] == 0.0
    with pytest.raises(ValueError):
        variance_correct([1, 2], [1, 2, 3])


@given(st.lists(st.floats(-100, 100), min_size=3, max_size=30), st.integers(1, 50))
def test_variance_correct_equal_counts_keeps_order(t, n):
    t = np.array(t)
    s = variance_correct(t, np.full(len(t), n))
    d = np.abs(t - t.mean())
    np.testing.assert_allclose(np.abs(s), d * np.sqrt(n), rtol=1e-12, atol=1e-9)


def test_mc_pvalue_examples():
    assert mc_pvalue([9, 1, 2, 3]) == 0.25
    assert mc_pvalue([0, 1, 2, 3]) == 1.0
    assert mc_pvalue([5, 5, 1, 2]) == 0.5


def test_bonferroni_examples():
    assert bonferroni_combine([0.02, 0.5, 0.9]) == pytest.approx(0.06)
    assert bonferroni_combine([0.3]) == 0.3
    assert bonferroni_combine([0.5, 0.6]) == 1.0
    with pytest.raises(ValueError):
        bonferroni_combine([])


def _scene_inputs(seed=0):
    s = generate_model(ModelSpec("M1", seed=seed))
    return s.pattern, s.covariate


def test_run_shift_test_basic_shape():
    p, z = _scene_inputs()
    r = run_shift_test(p, z, TestConfig(n_shifts=99, seed=3))
    assert r.replicates.shape == (99,)
    assert 1 / 100 <= r.p_value <= 1.0
    assert np.all(r.retained <= len(p)) and r.retained[0] == len(p)
    assert np.all(r.retained >= 5)


def test_run_shift_test_deterministic():
    p, z = _scene_inputs(1)
    cfg = TestConfig(n_shifts=99, seed=11)
    a, b = run_shift_test(p, z, cfg), run_shift_test(p, z, cfg)
    assert a.p_value == b.p_value
    assert np.array_equal(a.replicates, b.replicates)


def test_torus_keeps_counts():
    p, z = _scene_inputs(2)
    r = run_shift_test(p, z, TestConfig(n_shifts=49, correction="torus", statistic="mean"))
    assert np.all(r.retained == len(p))


def test_three_shifts_most_extreme():
    # p = 0.25 when T_0 beats all three replicates (mc_pvalue with N = 3)
    t = np.array([10.0, 1.0, 2.0, 3.0])
    assert mc_pvalue(np.abs(variance_correct(t, [5, 5, 5, 5]))) == 0.25


def test_torus_and_variance_agree_without_cropping():
    rng = np.random.default_rng(4)
    xy = 0.45 + 0.1 * rng.random((40, 2))
    p = MarkedPointPattern(xy, UNIT, rng.normal(size=40))
    z = _grid_field(lambda x, y: np.sin(5 * x) + y * y)
    shift = ShiftDistribution.uniform_disc(0.3)
    for stat in ("mean", "kendall", "cov"):
        tor = run_shift_test(p, z, TestConfig(99, "torus", stat, shift, seed=8))
        var = run_shift_test(p, z, TestConfig(99, "variance", stat, shift, seed=8))
        assert np.all(var.retained == 40)
        assert tor.p_value == var.p_value


def test_torus_rejects_polygon():
    tri = PolygonWindow(((0, 0), (1, 0), (0, 1)))
    p = MarkedPointPattern(np.array([[0.1, 0.1]] * 10), tri)
    z = _grid_field(lambda x, y: x)
    with pytest.raises(TorusUnsupportedError):
        run_shift_test(p, z, TestConfig(19, "torus", "mean"))


def test_degenerate_shift_aborts():
    p = MarkedPointPattern(np.full((6, 2), 0.01) + np.arange(6)[:, None] * 1e-3, UNIT)
    z = _grid_field(lambda x, y: x)
    cfg = TestConfig(19, "variance", "mean", ShiftDistribution.uniform_disc(50.0))
    with pytest.raises(DegenerateShiftError):
        run_shift_test(p, z, cfg)


def test_envelope_k1_matches_rank_pvalue():
    rng = np.random.default_rng(0)
    for _ in range(100):
        n = int(rng.integers(19, 80))
        vals = rng.normal(size=n + 1)
        if rng.random() < 0.3:
            vals = np.round(vals, 1)
        env = global_envelope_test(vals[0], vals[1:, None])
        ranks = pointwise_ranks(vals[:, None])[:, 0]
        assert env.p_value == mc_pvalue(-ranks)


def test_envelope_central_observation():
    rng = np.random.default_rng(1)
    k = 4
    below = -1 - rng.random((10, k))
    above = 1 + rng.random((10, k))
    env = global_envelope_test(np.zeros(k), np.vstack([below, above]))
    assert env.p_value == 1.0


def test_envelope_outside_hull():
    rng = np.random.default_rng(2)
    reps = rng.normal(size=(49, 1))
    # two-sided ranks: the smallest replicate also has rank 1 and ties with T_0
    assert global_envelope_test([10.0], reps).p_value == 2 / 50
    reps3 = rng.normal(size=(49, 3))
    env = global_envelope_test([10.0, -10.0, 10.0], reps3)
    assert env.p_value == 1 / 50
    assert np.array_equal(env.outside, [True, True, True])


def test_envelope_brackets_kept_replicates():
    rng = np.random.default_rng(3)
    reps = rng.normal(size=(99, 5))
    env = global_envelope_test(rng.normal(size=5), reps)
    allv = np.vstack([env.observed, reps])
    from rshift.shifttest import _lex_le_counts
    keep = _lex_le_counts(np.sort(pointwise_ranks(allv), axis=1))[1:] / 100 > 0.05
    assert np.all(reps[keep] >= env.lower) and np.all(reps[keep] <= env.upper)


def test_envelope_needs_19():
    with pytest.raises(ValueError):
        global_envelope_test([0.0], np.zeros((10, 1)))


def _two_type(xy1, xy2):
    xy = np.vstack([xy1, xy2])
    marks = np.r_[np.ones(len(xy1), int), np.full(len(xy2), 2)]
    return MarkedPointPattern(xy, UNIT, marks, "categorical")


def test_multitype_vector_length_and_separation():
    rng = np.random.default_rng(5)

    def bump(x, y, cx):
        return np.exp(-((x - cx) ** 2 + (y - 0.5) ** 2) / 0.01)

    z = _grid_field(lambda x, y: bump(x, y, 0.25) - bump(x, y, 0.75), n=128)
    ang = rng.uniform(0, 2 * np.pi, (2, 30))
    rad = 0.05 * np.sqrt(rng.random((2, 30)))
    xy1 = np.column_stack([0.25 + rad[0] * np.cos(ang[0]), 0.5 + rad[0] * np.sin(ang[0])])
    xy2 = np.column_stack([0.75 + rad[1] * np.cos(ang[1]), 0.5 + rad[1] * np.sin(ang[1])])
    p = _two_type(xy1, xy2)
    res = multitype_pmc_test(p, z, TestConfig(n_shifts=999, seed=1))
    assert np.size(res.t0) == 1
    assert res.envelope is not None
    assert res.p_value <= 0.01


def test_multitype_null_rate():
    pv = []
    for seed in range(300):
        s = generate_model(ModelSpec("M1", seed=50_000 + seed))
        labels = np.random.default_rng(seed).integers(1, 3, len(s.pattern))
        p = MarkedPointPattern(s.pattern.xy, UNIT, labels, "categorical", check=False)
        pv.append(multitype_pmc_test(p, s.covariate, TestConfig(199, seed=seed)).p_value)
    rate = np.mean(np.array(pv) <= 0.05)
    assert 0.02 <= rate <= 0.09


def test_multicovariate_runs():
    p, z = _scene_inputs(3)
    z2 = _grid_field(lambda x, y: x + y, n=128)
    res = multicovariate_pc_test(p, [z, z2], TestConfig(99, statistic="mean", seed=2))
    assert res.t0.shape == (2,)
    assert res.envelope.lower.shape == (2,)


def test_schlather_iid_marks_uniform():
    rng = np.random.default_rng(6)
    pv = []
    for t in range(300):
        xy = rng.random((150, 2))
        p = MarkedPointPattern(xy, UNIT, rng.normal(size=150))
        pv.append(schlather_test(p, n_sims=99, seed=t).p_value)
    # 1% critical value of the one-sample KS statistic for n = 300
    assert kstest(pv, "uniform").statistic < 1.628 / np.sqrt(300)


def test_schlather_null_and_power():
    null = column_pvalues("M1", 0.0, ["pm-schlather"], 300, 199, 7)[0]
    alt = column_pvalues("M4", 0.0, ["pm-schlather"], 300, 199, 7)[0]
    assert np.mean(null <= 0.05) <= 0.10
    assert np.mean(alt <= 0.05) >= 0.35
