import datetime as dt

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mrrce.evaluation import (
    FeatureRecipe,
    Fourier,
    Holiday,
    MetricReport,
    OneHot,
    PiecewiseTrend,
    RollingOriginPlan,
    build_features,
    daily_recipe,
    forecast_mse,
    holiday_indices,
    iter_folds,
    kfold_split,
    loo_split,
    model_error,
    paired_t_test,
    rolling_origin,
    scale_responses,
    unscale_responses,
)
from mrrce.numerics import make_rng

from conftest import random_spd


def t_pvalue_oracle(t, df):
    # two-sided tail via the regularized incomplete beta at 50 digits
    mpmath.mp.dps = 50
    x = mpmath.mpf(df) / (df + mpmath.mpf(t) ** 2)
    return float(mpmath.betainc(mpmath.mpf(df) / 2, mpmath.mpf(1) / 2, 0, x, regularized=True))


def test_model_error_cases(rng):
    G = rng.standard_normal((4, 3))
    assert model_error(G, G, np.eye(4)) == 0
    H = G.copy()
    H[2, 1] += 0.3
    assert model_error(G, H, np.eye(4)) == pytest.approx(0.09)
    S = random_spd(rng, 4)
    Gh = rng.standard_normal((4, 3))
    cols = sum((G[:, j] - Gh[:, j]) @ S @ (G[:, j] - Gh[:, j]) for j in range(3))
    assert model_error(G, Gh, S) == pytest.approx(cols, rel=1e-12)
    perm = [2, 0, 1]
    assert model_error(G[:, perm], Gh[:, perm], S) == pytest.approx(cols, rel=1e-12)
    with pytest.raises(ValueError):
        model_error(G, Gh[:, :2], S)


def test_forecast_mse():
    assert forecast_mse(np.ones((3, 2)), np.ones((3, 2))) == 0
    assert forecast_mse(np.zeros((4, 3)), np.full((4, 3), 2.0)) == 4.0
    assert forecast_mse(np.eye(2), np.zeros((2, 2))) == 0.5
    with pytest.raises(ValueError):
        forecast_mse(np.ones((2, 2)), np.ones((2, 3)))


def test_paired_t_degenerate():
    a = np.arange(5.0)
    assert paired_t_test(a, a) == (0.0, 1.0)
    t, p = paired_t_test(np.ones(4) + 1, np.ones(4))
    assert t == np.inf and p == 0.0
    with pytest.raises(ValueError):
        paired_t_test([1.0], [2.0])


def test_paired_t_known_value():
    d = np.array([1.0] * 5 + [-1.0] * 5)
    d = (d - d.mean()) / d.std(ddof=1) + 1.0
    t, p = paired_t_test(d, np.zeros(10))
    assert t == pytest.approx(np.sqrt(10), rel=1e-12)
    assert p == pytest.approx(0.0115, abs=5e-5)
    assert abs(p - t_pvalue_oracle(t, 9)) <= 1e-10


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 40), st.integers(0, 2**32 - 1))
def test_paired_t_oracle_and_antisymmetry(n, seed):
    r = make_rng(seed)
    a, b = r.standard_normal(n), r.standard_normal(n) + 0.3
    t, p = paired_t_test(a, b)
    t2, p2 = paired_t_test(b, a)
    assert t2 == pytest.approx(-t) and p2 == pytest.approx(p)
    assert abs(p - t_pvalue_oracle(t, n - 1)) <= 1e-10


def test_metric_report():
    rep = MetricReport("x", [1.0, 2.0, 4.0])
    assert rep.mean == pytest.approx(7 / 3, abs=1e-12)
    assert rep.std == pytest.approx(np.std([1, 2, 4], ddof=1), abs=1e-12)


def test_kfold_sizes_and_partition():
    labels = kfold_split(10, 3, make_rng(0))
    assert sorted(np.bincount(labels)) == [3, 3, 4]
    tests = [te for _, te in iter_folds(labels)]
    assert sorted(np.concatenate(tests)) == list(range(10))
    np.testing.assert_array_equal(labels, kfold_split(10, 3, make_rng(0)))
    assert sorted(kfold_split(6, 6, make_rng(1))) == list(range(6))
    np.testing.assert_array_equal(loo_split(4), np.arange(4))
    for bad in (1, 11):
        with pytest.raises(ValueError):
            kfold_split(10, bad, make_rng(0))


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 200), st.integers(2, 20), st.integers(0, 2**32 - 1))
def test_kfold_balance(n, k, seed):
    k = min(k, n)
    counts = np.bincount(kfold_split(n, k, make_rng(seed)), minlength=k)
    assert counts.max() - counts.min() <= 1 and counts.sum() == n


def test_rolling_origin_plan():
    plan = RollingOriginPlan()
    splits = rolling_origin(plan, 730)
    assert len(splits) == 26
    tr, te = splits[0]
    assert tr[0] == 0 and tr[-1] == 364 and te[0] == 365 and te[-1] == 378
    tr, te = splits[-1]
    assert tr[-1] + 1 == 365 + 25 * 14 and te[-1] + 1 == 729
    for tr, te in splits:
        assert te.min() > tr.max() and len(np.intersect1d(tr, te)) == 0
    with pytest.raises(ValueError):
        rolling_origin(plan, 700)
    one = rolling_origin(RollingOriginPlan(5, 1, 1, 3), 8)
    assert [(len(a), b.tolist()) for a, b in one] == [(5, [5]), (6, [6]), (7, [7])]


def test_fourier_features():
    f = build_features(FeatureRecipe((Fourier(7, 3),)), np.array([0, 3, 10]))
    np.testing.assert_allclose(f[0], [1, 0, 1, 0, 1, 0], atol=1e-15)
    np.testing.assert_allclose(f[1], f[2], atol=1e-12)
    with pytest.raises(ValueError):
        Fourier(0, 2)


def test_trend_holiday_onehot():
    t = np.arange(6)
    recipe = FeatureRecipe((PiecewiseTrend((2, 4)), Holiday({1, 4}), OneHot("dow", ("a", "b", "c"))))
    X = build_features(recipe, t, {"dow": np.array(["a", "b", "c", "a", "b", "c"])})
    assert X.shape[1] == recipe.width == 3 + 1 + 2
    np.testing.assert_allclose(X[:, 1], [0, 0, 0, 1, 2, 3])
    np.testing.assert_allclose(X[:, 3], [0, 1, 0, 0, 1, 0])
    np.testing.assert_allclose(X[:, 4], [0, 1, 0, 0, 1, 0])
    with pytest.raises(ValueError):
        build_features(recipe, t)
    with pytest.raises(ValueError):
        build_features(recipe, np.array([-1]))


def test_daily_recipe_has_68_columns():
    recipe = daily_recipe(730)
    assert recipe.width == 68
    X = build_features(recipe, np.arange(730))
    assert X.shape == (730, 68)
    hol = holiday_indices(dt.date(2016, 1, 1), 730)
    assert len(hol) == 10
    assert 0 in hol["new_year"] and (dt.date(2016, 11, 24) - dt.date(2016, 1, 1)).days in hol["thanksgiving"]


def test_daily_recipe_changepoint_range():
    recipe = daily_recipe(730, trend_span=400, changepoint_range=0.8)
    assert recipe.width == 68
    cps = recipe.specs[-1].changepoints
    assert len(cps) == 31 and 0 < min(cps) and max(cps) < 320
    # every hinge is active on the first 400 days, so none is constant there
    X = build_features(recipe, np.arange(400))
    assert np.all(X[:, -32:].std(axis=0) > 0)
    with pytest.raises(ValueError):
        daily_recipe(730, changepoint_range=0.0)


def test_scale_responses():
    Y = np.array([[5.0, 2.0], [10.0, 2.0]])
    S, m = scale_responses(Y)
    assert S[0, 0] == 0.5
    np.testing.assert_array_equal(S[:, 1], 1.0)
    np.testing.assert_allclose(unscale_responses(S, m), Y, atol=1e-12)
    with pytest.raises(ValueError):
        scale_responses(np.array([[-1.0], [0.0]]))
