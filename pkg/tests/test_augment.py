import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tsautoml.augment import (AugmentError, AugmentParams, augment_dataset, gen_negative,
                              negative_window, negatives_for, scale, shift, time_warp, warp_bounds)
from tsautoml.data import Dataset, TimeSeries, make_synthetic_sine


def ts(vals):
    return TimeSeries("x", np.asarray(vals, float))


def test_scale():
    np.testing.assert_allclose(scale(ts([1, 2, 3]), 1.5).values[:, 0], [1.5, 3, 4.5])
    assert scale(ts([1, 2, 3]), 1.0) == ts([1, 2, 3])
    with pytest.raises(AugmentError):
        scale(ts([1, 2, 3]), 2.0)


def test_shift():
    np.testing.assert_array_equal(shift(ts([1, 2, 3, 4]), 1).values[:, 0], [4, 1, 2, 3])
    np.testing.assert_array_equal(shift(ts([1, 2, 3, 4]), -1).values[:, 0], [2, 3, 4, 1])
    assert shift(ts([1, 2, 3, 4]), 0) == ts([1, 2, 3, 4])
    s = ts(np.arange(12.0))
    assert shift(shift(s, 7), 5) == s
    with pytest.raises(AugmentError):
        shift(ts([1, 2, 3]), 11)
    with pytest.raises(AugmentError):
        shift(ts([1, 2, 3]), 3)


@given(st.lists(st.floats(-10, 10), min_size=11, max_size=40), st.integers(-10, 10))
def test_shift_preserves_multiset(vals, h):
    out = shift(ts(vals), h)
    assert sorted(out.values[:, 0].tolist()) == sorted(ts(vals).values[:, 0].tolist())


def test_time_warp_extremes_and_determinism():
    s = ts(np.arange(40.0))
    lo, hi = warp_bounds(40)
    assert (lo, hi) == (4, 10)
    assert time_warp(s, 6, 0, marks=[True] * 6).T == 46
    assert time_warp(s, 6, 0, marks=[False] * 6).T == 34
    assert time_warp(s, 6, 3) == time_warp(s, 6, 3)
    with pytest.raises(AugmentError):
        time_warp(s, 11, 0)
    with pytest.raises(AugmentError):
        time_warp(s, 3, 0)


@given(st.integers(10, 80), st.integers(0, 10**6))
def test_time_warp_length_bounds(T, seed):
    lo, hi = warp_bounds(T)
    h = (lo + hi) // 2
    out = time_warp(ts(np.arange(float(T))), h, seed)
    assert T - h <= out.T <= T + h


def test_augment_dataset():
    ds = make_synthetic_sine(5, 0, T=20, seed=0)
    assert augment_dataset(ds, AugmentParams("scaling", 0, 1.2)) is ds
    out = augment_dataset(ds, AugmentParams("scaling", 100, 1.2, seed=1))
    assert len(out) == 105
    assert len(set(out.ids)) == 105
    assert set(ds.ids).isdisjoint(out.ids[5:])


def test_augment_params_bounds():
    with pytest.raises(AugmentError):
        AugmentParams("scaling", 101)
    with pytest.raises(AugmentError):
        AugmentParams("shifting", 1, h_shift=11)
    with pytest.raises(AugmentError):
        AugmentParams("bogus")


@given(st.integers(4, 80), st.integers(0, 10**6))
def test_gen_negative_contract(T, seed):
    rng = np.random.default_rng(seed)
    s = ts(rng.normal(size=T))
    neg = gen_negative(s, seed)
    assert neg.T == T
    diff = np.flatnonzero(neg.values[:, 0] != s.values[:, 0])
    if diff.size:
        lo, hi = negative_window(T)
        assert diff.max() - diff.min() + 1 <= hi
    assert np.all(neg.values >= s.values.min()) and np.all(neg.values <= s.values.max())
    assert (T - diff.size) >= math.ceil(3 * T / 4) - 1


def test_gen_negative_degenerate_flag():
    neg, flag = gen_negative(ts([2.0] * 10), 0, return_flag=True)
    assert flag and np.all(neg.values == 2.0)
    _, flag = gen_negative(ts(np.arange(10.0)), 0, return_flag=True)
    assert not flag


def test_negatives_one_per_positive():
    ds = make_synthetic_sine(7, 3, T=16, seed=0)
    assert len(negatives_for(ds, 0)) == len(ds)
