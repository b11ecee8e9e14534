import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tsautoml.data import (DataError, Dataset, SamplerConfig, TimeSeries, irregular_sample,
                           load_multivariate, load_ucr, make_synthetic_sine, most_frequent_class,
                           save_multivariate, save_ucr, split, znormalize)


def test_load_ucr_single_line(tmp_path):
    p = tmp_path / "a.tsv"
    p.write_text("1\t0.5\t0.7\n")
    ds = load_ucr(p)
    assert len(ds) == 1 and ds.channel_dim == 1
    s = ds.series[0]
    assert s.T == 2 and s.label == 1
    np.testing.assert_array_equal(s.time_index, [0, 1])


def test_load_ucr_length_mismatch(tmp_path):
    p = tmp_path / "a.tsv"
    p.write_text("0\t1\t2\t3\t4\t5\n1\t1\t2\t3\t4\t5\t6\n")
    with pytest.raises(DataError, match="length"):
        load_ucr(p)


def test_load_ucr_parse_error_names_line(tmp_path):
    p = tmp_path / "a.tsv"
    p.write_text("1\tabc\n")
    with pytest.raises(DataError, match=":1:"):
        load_ucr(p)


def test_load_ucr_empty(tmp_path):
    p = tmp_path / "a.tsv"
    p.write_text("")
    with pytest.raises(DataError, match="empty"):
        load_ucr(p)


def test_load_multivariate(tmp_path):
    p = tmp_path / "m.json"
    p.write_text(json.dumps({"channel_dim": 2, "series": [
        {"id": "a", "label": 0, "values": [[1, 2], [3, 4], [5, 6]]},
        {"id": "b", "label": None, "values": [[1, 2], [3, 4], [5, 7]]}]}))
    ds = load_multivariate(p)
    assert ds.channel_dim == 2 and len(ds) == 2 and ds.series[0].values.shape == (3, 2)


def test_load_multivariate_ragged_channels(tmp_path):
    p = tmp_path / "m.json"
    p.write_text(json.dumps({"channel_dim": 2, "series": [{"id": "a", "values": [[1, 2], [3]]}]}))
    with pytest.raises(DataError):
        load_multivariate(p)


def test_load_multivariate_empty(tmp_path):
    p = tmp_path / "m.json"
    p.write_text(json.dumps({"channel_dim": 1, "series": []}))
    with pytest.raises(DataError, match="empty"):
        load_multivariate(p)


def test_roundtrip_formats(tmp_path):
    ds = make_synthetic_sine(5, 2, T=16, seed=1)
    save_ucr(ds, tmp_path / "d.tsv")
    back = load_ucr(tmp_path / "d.tsv")
    for a, b in zip(ds, back):
        np.testing.assert_array_equal(a.values, b.values)
        assert a.label == b.label
    thin = Dataset(tuple(irregular_sample(s, SamplerConfig(0.5, i)) for i, s in enumerate(ds)), 1)
    save_multivariate(thin, tmp_path / "d.json")
    back = load_multivariate(tmp_path / "d.json")
    for a, b in zip(thin, back):
        assert a == b


def test_timeseries_invariants():
    with pytest.raises(DataError):
        TimeSeries("x", [1.0, 2.0], time_index=[1, 1])
    with pytest.raises(DataError):
        TimeSeries("x", [], time_index=[])
    with pytest.raises(DataError):
        TimeSeries("x", [1.0], time_index=[-1])


def test_znormalize_examples():
    ds = Dataset((TimeSeries("a", [1.0, 2.0, 3.0]), TimeSeries("b", [5.0, 5.0])), 1)
    z = znormalize(ds)
    np.testing.assert_allclose(z.series[0].values[:, 0], [-1.224744871391589, 0, 1.224744871391589])
    np.testing.assert_array_equal(z.series[1].values[:, 0], [0.0, 0.0])


@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=40))
def test_znormalize_idempotent(vals):
    ds = Dataset((TimeSeries("a", vals),), 1)
    once = znormalize(ds)
    twice = znormalize(once)
    np.testing.assert_allclose(once.series[0].values, twice.series[0].values, atol=1e-12)


def test_irregular_sample_examples():
    s = TimeSeries("a", np.arange(10.0))
    out = irregular_sample(s, SamplerConfig(0.5, 0))
    assert out.T == 5
    assert np.all(np.diff(out.time_index) > 0)
    np.testing.assert_array_equal(out.values[:, 0], out.time_index.astype(float))
    assert irregular_sample(s, SamplerConfig(0.0, 0)) == s
    assert irregular_sample(TimeSeries("b", np.arange(4.0)), SamplerConfig(0.7, 1)).T == 2


def test_irregular_sample_exhaustive():
    for T in range(1, 33):
        s = TimeSeries("a", np.arange(float(T)))
        for beta in np.linspace(0, 0.95, 20):
            n_drop = math.floor(beta * T)
            if n_drop >= T:
                with pytest.raises(DataError):
                    irregular_sample(s, SamplerConfig(beta, 3))
                continue
            assert irregular_sample(s, SamplerConfig(beta, 3)).T == T - n_drop


def test_sampler_config_bounds():
    with pytest.raises(ValueError):
        SamplerConfig(1.0, 0)
    with pytest.raises(ValueError):
        SamplerConfig(-0.1, 0)


def _labeled(n0, n1):
    return make_synthetic_sine(n0, n1, T=16, seed=0)


def test_split_clean_and_contaminated():
    ds = _labeled(200, 60)
    sp = split(ds, "anomaly", contamination=0.0, seed=1)
    assert set(sp.train.labels.tolist()) == {0}
    assert set(sp.val.labels.tolist()) == {0, 1} and set(sp.test.labels.tolist()) == {0, 1}
    sp = split(ds, "anomaly", contamination=0.10, seed=1)
    assert len(sp.train) == 100 and int(sp.train.labels.sum()) == 10


@given(st.floats(0, 0.3), st.integers(0, 1000))
def test_split_contamination_count(c, seed):
    ds = _labeled(120, 60)
    sp = split(ds, "anomaly", contamination=c, seed=seed)
    n = len(sp.train)
    assert int(sp.train.labels.sum()) == round(c * n)
    ids = [set(d.ids) for d in (sp.train, sp.val, sp.test)]
    assert not (ids[0] & ids[1]) and not (ids[0] & ids[2]) and not (ids[1] & ids[2])


def test_split_deterministic_and_errors():
    ds = _labeled(50, 20)
    a, b = split(ds, seed=7), split(ds, seed=7)
    assert a.train.ids == b.train.ids and a.test.ids == b.test.ids
    with pytest.raises(DataError):
        split(ds, normal_class=5)
    with pytest.raises(DataError):
        split(ds, ratios=(0.5, 0.5, 0.5))


def test_split_cluster_stratified():
    ds = _labeled(60, 30)
    sp = split(ds, "cluster", seed=0)
    for part in (sp.train, sp.val, sp.test):
        assert set(part.labels.tolist()) == {0, 1}
    assert len(sp.train) + len(sp.val) + len(sp.test) == 90


def test_most_frequent_class_ties_lowest():
    ds = Dataset((TimeSeries("a", [1.0], label=3), TimeSeries("b", [1.0], label=2)), 1)
    assert most_frequent_class(ds) == 2


def test_synthetic_sine():
    ds = make_synthetic_sine(10, 0, T=32, seed=0)
    assert len(ds) == 10 and set(ds.labels.tolist()) == {0}
    a = make_synthetic_sine(3, 3, T=32, seed=5)
    b = make_synthetic_sine(3, 3, T=32, seed=5)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.values, y.values)
    with pytest.raises(DataError):
        make_synthetic_sine(1, 1, T=4)


def test_synthetic_anomaly_window_is_contiguous():
    # same generator draws (phase, k) before the window, so rebuild the base sine
    ds = make_synthetic_sine(0, 20, T=64, seed=3)
    rng = np.random.default_rng(3)
    t = np.arange(64)
    for s in ds:
        phase = rng.uniform(0, 64)
        k = rng.integers(1, 3)
        base = np.sin(2 * np.pi * k * (t + phase) / 64)
        width = max(1, int(round(rng.uniform(0.1, 0.25) * 64)))
        start = rng.integers(0, 64 - width + 1)
        rng.uniform(-1, 1, size=width)
        diff = np.flatnonzero(s.values[:, 0] != base)
        assert diff.min() >= start and diff.max() < start + width
