"""Data tests: synthetic generation, ingestion, normalization, file format."""

import json
import math
import os

import numpy as np
import pytest

from pode.data import (
    DataError,
    Dataset,
    DEFAULT_PARAM_RANGES,
    Normalizer,
    TimeSeriesSample,
    fit_normalizer,
    gen_synthetic,
    gen_synthetic_suite,
    ingest_pems,
    irregular_subsample,
    load_dataset,
    normalize,
    save_dataset,
)

FIXTURE_CSV = os.path.join(os.path.dirname(__file__), "fixtures",
                           "pems_small.csv")


# ---------------------------------------------------------------------------
# sample invariants


def test_sample_validation():
    with pytest.raises(DataError):
        TimeSeriesSample(times=[0.0, 0.0, 1.0], values=[1, 2, 3], split_index=1)
    with pytest.raises(DataError):
        TimeSeriesSample(times=[0.0, 1.0], values=[1, 2, 3], split_index=1)
    with pytest.raises(DataError):
        TimeSeriesSample(times=[0.0, 1.0], values=[1, 2], split_index=2)
    with pytest.raises(DataError):
        TimeSeriesSample(times=[0.0, 1.0], values=[1, 2], split_index=0)


def test_sample_halves():
    s = TimeSeriesSample(times=[0.0, 1.0, 2.0, 3.0], values=[1, 2, 3, 4],
                         split_index=2)
    assert np.array_equal(s.observed_values, [1, 2])
    assert np.array_equal(s.forecast_values, [3, 4])


# ---------------------------------------------------------------------------
# synthetic generation


def test_curve_value_at_origin():
    s = gen_synthetic(0.0, 1.0, 2.0, noise_sd=0.0, seed=0)
    # exp(0) + sin(0) + sin(0) = 1 on the dense grid's first point
    assert s.grid_values[0] == 1.0


def test_noiseless_sample_lies_on_analytic_curve():
    c, t1, t2 = 0.4, 7.0, 40.0
    s = gen_synthetic(c, t1, t2, noise_sd=0.0, seed=3)
    expected = np.exp(c * s.times) + np.sin(t1 * s.times) + np.sin(t2 * s.times)
    assert np.allclose(s.values, expected, atol=1e-12)


def test_noise_applied_to_sampled_points_only():
    a = gen_synthetic(0.4, 7.0, 40.0, noise_sd=0.0, seed=5)
    b = gen_synthetic(0.4, 7.0, 40.0, noise_sd=0.05, seed=5)
    assert np.array_equal(a.grid_values, b.grid_values)  # grid stays clean
    assert np.array_equal(a.times, b.times)
    assert not np.array_equal(a.values, b.values)


def test_generation_determinism():
    a = gen_synthetic(0.4, 7.0, 40.0, seed=9)
    b = gen_synthetic(0.4, 7.0, 40.0, seed=9)
    c = gen_synthetic(0.4, 7.0, 40.0, seed=10)
    assert np.array_equal(a.times, b.times)
    assert np.array_equal(a.values, b.values)
    assert not np.array_equal(a.times, c.times)


def test_generation_shape_contract():
    s = gen_synthetic(0.4, 7.0, 40.0, seed=1)
    assert len(s.times) == 200
    assert s.split_index == 100
    assert len(s.grid_times) == 1000
    assert s.times[0] >= 0.0 and s.times[-1] <= 2.0
    assert np.all(np.diff(s.times) > 0)


def test_generation_validation():
    with pytest.raises(DataError):
        gen_synthetic(0.4, 40.0, 7.0)  # t1 must be below t2
    with pytest.raises(DataError):
        gen_synthetic(0.4, 7.0, 40.0, n_grid=300, n_points=200)
    with pytest.raises(DataError):
        gen_synthetic(0.4, 7.0, 40.0, noise_sd=-0.1)


def test_suite_split_and_ranges():
    ds = gen_synthetic_suite(n=50, seed=7)
    assert len(ds.train) == 40
    assert len(ds.test) == 10
    for s in ds.samples:
        assert len(s.times) == 200
        assert s.split_index == 100
        for key in ("c", "t1", "t2"):
            lo, hi = DEFAULT_PARAM_RANGES[key]
            assert lo <= s.meta[key] <= hi


def test_suite_reproducible_files(tmp_path):
    p1, p2 = str(tmp_path / "a.jsonl"), str(tmp_path / "b.jsonl")
    save_dataset(gen_synthetic_suite(n=10, seed=3), p1)
    save_dataset(gen_synthetic_suite(n=10, seed=3), p2)
    assert open(p1, "rb").read() == open(p2, "rb").read()


# ---------------------------------------------------------------------------
# ingestion


def test_ingest_fixture_counts_and_split():
    ds = ingest_pems(FIXTURE_CSV, "400001")
    assert len(ds.samples) == 18  # 20 days minus 2 corrupted
    assert len(ds.train) == 14
    assert len(ds.test) == 4
    for s in ds.samples:
        assert len(s.times) == 288
        assert s.split_index == 144
        assert s.times[0] == 0.0 and s.times[-1] == 2.0
    days = [s.meta["day"] for s in ds.samples]
    assert days == sorted(days)  # chronological split
    assert all(s.role == "train" for s in ds.samples[:14])
    assert all(s.role == "test" for s in ds.samples[14:])


def test_ingest_drops_incomplete_days():
    ds = ingest_pems(FIXTURE_CSV, "400001")
    days = {s.meta["day"] for s in ds.samples}
    assert "2017-03-05" not in days  # one missing reading
    assert "2017-03-12" not in days  # truncated afternoon


def test_ingest_date_window():
    from datetime import date

    ds = ingest_pems(FIXTURE_CSV, "400001", date(2017, 3, 1), date(2017, 3, 3))
    assert len(ds.samples) == 3


def test_ingest_unknown_sensor():
    with pytest.raises(DataError):
        ingest_pems(FIXTURE_CSV, "999999")


def test_ingest_malformed_row_reports_line(tmp_path):
    path = str(tmp_path / "bad.csv")
    with open(path, "w") as fh:
        fh.write("timestamp,sensor_id,flow\n")
        fh.write("2017-01-01T00:00:00,1,notafloat\n")
    with pytest.raises(DataError) as exc:
        ingest_pems(path, "1")
    assert ":2:" in str(exc.value)


# ---------------------------------------------------------------------------
# subsampling


def test_subsample_identity_and_determinism():
    s = gen_synthetic(0.4, 7.0, 40.0, seed=2)
    assert irregular_subsample(s, 200) is s
    a = irregular_subsample(s, 50, seed=4)
    b = irregular_subsample(s, 50, seed=4)
    assert np.array_equal(a.times, b.times)
    assert np.all(np.diff(a.times) > 0)
    assert a.split_index == 25  # proportional split
    with pytest.raises(DataError):
        irregular_subsample(s, 1)


# ---------------------------------------------------------------------------
# normalization


def test_normalizer_round_trip():
    ds = gen_synthetic_suite(n=10, seed=1)
    norm = fit_normalizer(ds)
    values = ds.samples[0].values
    assert np.allclose(norm.invert(norm.apply(values)), values, atol=1e-12)


def test_normalized_train_statistics():
    ds = normalize(gen_synthetic_suite(n=20, seed=2))
    train_vals = np.concatenate([s.values for s in ds.train])
    assert abs(train_vals.mean()) < 1e-10
    assert abs(train_vals.std() - 1.0) < 1e-10
    test_vals = np.concatenate([s.values for s in ds.test])
    # fitted on train only: test statistics land near, but not at, 0/1
    assert test_vals.mean() != 0.0 or test_vals.std() != 1.0


def test_degenerate_scale_rejected():
    flat = TimeSeriesSample(times=[0.0, 1.0, 2.0], values=[5.0, 5.0, 5.0],
                            split_index=1)
    with pytest.raises(DataError):
        fit_normalizer(Dataset(samples=[flat]))


# ---------------------------------------------------------------------------
# dataset files


def test_save_load_round_trip(tmp_path):
    ds = gen_synthetic_suite(n=6, seed=4)
    path = str(tmp_path / "ds.jsonl")
    save_dataset(ds, path)
    back = load_dataset(path)
    assert len(back.samples) == 6
    for a, b in zip(ds.samples, back.samples):
        assert np.array_equal(a.times, b.times)
        assert np.array_equal(a.values, b.values)
        assert np.array_equal(a.grid_values, b.grid_values)
        assert a.split_index == b.split_index
        assert a.role == b.role


def test_load_rejects_corrupt_line(tmp_path):
    path = str(tmp_path / "bad.jsonl")
    with open(path, "w") as fh:
        fh.write("{not json\n")
    with pytest.raises(DataError) as exc:
        load_dataset(path)
    assert ":1:" in str(exc.value)


def test_load_validates_sample_invariants(tmp_path):
    path = str(tmp_path / "bad.jsonl")
    rec = {"times": [0.0, 0.0], "values": [1.0, 2.0], "split": 1}
    with open(path, "w") as fh:
        fh.write(json.dumps(rec) + "\n")
    with pytest.raises(DataError):
        load_dataset(path)


def test_save_leaves_no_temp_files(tmp_path):
    ds = gen_synthetic_suite(n=3, seed=5)
    save_dataset(ds, str(tmp_path / "out.jsonl"))
    leftovers = [f for f in os.listdir(tmp_path) if f.endswith(".tmp")]
    assert leftovers == []
