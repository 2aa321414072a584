import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from realmlp.dataio import from_arrays
from realmlp.preprocess import (FittedPreprocessor, fit_column_scaler, fit_preprocessor, plan_column, smooth_clip,
                                transform_column)

finite = st.floats(-1e6, 1e6, allow_nan=False)


def test_smooth_clip_examples():
    assert smooth_clip(0.0) == 0.0
    assert abs(smooth_clip(3.0) - 3 / math.sqrt(2)) < 1e-15
    assert abs(smooth_clip(3.0) - 2.1213203) < 1e-7
    assert abs(smooth_clip(1e9) - 3.0) < 1e-6


@given(finite)
def test_smooth_clip_odd_and_bounded(x):
    assert smooth_clip(-x) == -smooth_clip(x)
    assert abs(smooth_clip(x)) < 3.0


def test_scaler_examples():
    sc = fit_column_scaler([0, 1, 2, 3, 4])
    assert (sc.q1_2, sc.q3_4 - sc.q1_4, sc.s) == (2.0, 2.0, 0.5)
    assert transform_column(sc, 2.0) == 0.0
    assert abs(transform_column(sc, 4.0) - 1 / math.sqrt(10 / 9)) < 1e-15
    assert abs(transform_column(sc, 4.0) - 0.9486833) < 1e-7

    sc = fit_column_scaler([1, 1, 1, 1, 9])
    assert sc.q3_4 == sc.q1_4 and sc.q1 - sc.q0 == 8.0 and sc.s == 0.25

    sc = fit_column_scaler([7, 7, 7])
    assert sc.s == 0.0
    np.testing.assert_array_equal(transform_column(sc, np.array([-1e9, 7.0, 3.0])), [0.0, 0.0, 0.0])


def test_non_finite_inputs_clamped_to_train_range():
    sc = fit_column_scaler([0, 1, 2, 3, 4])
    out = transform_column(sc, np.array([np.inf, -np.inf, 4.0, 0.0]))
    assert out[0] == out[2] and out[1] == out[3]


@given(st.lists(finite, min_size=1, max_size=40), st.lists(finite, min_size=1, max_size=10))
@settings(max_examples=200)
def test_scaler_matches_oracle(train, query):
    sc = fit_column_scaler(train)
    assert sc.s == oracles.robust_scale_factor(train) or math.isclose(sc.s, oracles.robust_scale_factor(train),
                                                                      rel_tol=1e-12)
    got = transform_column(sc, np.array(query))
    want = [oracles.robust_transform(train, q) for q in query]
    np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-12)
    assert np.all(np.abs(got) < 3.0)


@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=40))
def test_transform_monotone(train):
    sc = fit_column_scaler(train)
    grid = np.linspace(-2e3, 2e3, 501)
    out = transform_column(sc, grid)
    # near saturation consecutive values differ by less than an ulp
    assert np.all(np.diff(out) >= -4e-16)


@given(st.lists(st.integers(-1000, 1000), min_size=1, max_size=30), st.integers(-1000, 1000),
       st.integers(-3000, 3000))
def test_translation_equivariance(train, c, q):
    # integers keep the shifted quantiles exact
    a = transform_column(fit_column_scaler(np.array(train, float)), float(q))
    b = transform_column(fit_column_scaler(np.array(train, float) + c), float(q + c))
    assert a == pytest.approx(b, abs=1e-12)


def test_fit_is_deterministic():
    x = np.random.default_rng(0).standard_cauchy(100)
    assert fit_column_scaler(x) == fit_column_scaler(x.copy())


def _cat_data(cards, n=60, seed=0):
    g = np.random.default_rng(seed)
    cats = np.stack([np.arange(n) % k for k in cards], axis=1)
    cats = cats[g.permutation(n)]
    return from_arrays(g.normal(size=(n, 1)), g.integers(0, 2, n), "classification", x_cat=cats,
                       n_categories=list(cards))


def test_category_routing():
    data = _cat_data([2, 5, 9])
    pre = fit_preprocessor(data, np.arange(data.n_rows))
    assert [p.kind for p in pre.plans] == ["binary", "onehot", "embed"]
    assert pre.out_width == 1 + 1 + 5
    assert pre.embed_cardinalities == [10]
    raw = pre.raw_numeric(data.x_num, data.x_cat)
    assert set(np.unique(raw[:, 1])) == {-1.0, 1.0}
    onehot = raw[:, 2:7]
    np.testing.assert_array_equal(onehot.sum(axis=1), 1.0)
    x, codes = pre.apply(data)
    assert np.all(np.abs(x) < 3.0)
    # one-hot columns get robust-scaled like any numeric column
    for c in range(2, 7):
        want = [oracles.robust_transform(list(raw[:, c]), v) for v in raw[:, c]]
        np.testing.assert_allclose(x[:, c], want, rtol=0, atol=1e-12)
    assert codes.shape == (data.n_rows, 1) and codes.min() == 1 and codes.max() == 9


def test_unbounded_one_hot_for_simple_preset():
    data = _cat_data([9])
    pre = fit_preprocessor(data, np.arange(data.n_rows), max_one_hot=None)
    assert pre.plans[0].kind == "onehot" and pre.out_width == 1 + 9


def test_missing_and_unseen_categories():
    vocab = ["a", "", "b", "c", "d"]
    plan = plan_column(np.array([0, 1, 2, 3]), vocab, 8)
    assert plan.kind == "onehot" and plan.known == (0, 2, 3)
    enc = plan.encode(np.array([1, 4, 3]))
    np.testing.assert_array_equal(enc, [[0, 0, 0], [0, 0, 0], [0, 0, 1]])
    binary = plan_column(np.array([0, 2, 1]), vocab, 8)
    np.testing.assert_array_equal(binary.encode(np.array([0, 2, 1, 3]))[:, 0], [-1, 1, 0, 0])


def test_train_rows_only():
    data = _cat_data([12])
    pre = fit_preprocessor(data, np.arange(30))
    # categories first seen outside the fitting rows land in the missing slot
    seen = set(data.x_cat[:30, 0])
    _, codes = pre.apply(data)
    assert np.all((codes[:, 0] == 0) == ~np.isin(data.x_cat[:, 0], list(seen)))


def test_preprocessor_dict_round_trip():
    data = _cat_data([2, 4, 11])
    pre = fit_preprocessor(data, np.arange(40))
    back = FittedPreprocessor.from_dict(pre.to_dict())
    assert back == pre
