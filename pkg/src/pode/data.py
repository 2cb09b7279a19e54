"""Synthetic generation, irregular sampling, traffic CSV ingestion, splits.

Every sample's time axis is normalized to span [0, 2] so integration scales
are uniform across datasets. Values stay in raw units until a normalizer is
fitted on the training split.
"""

from __future__ import annotations

import csv
import json
import math
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

TIME_SPAN = 2.0

DEFAULT_PARAM_RANGES = {
    "c": (0.2, 0.8),
    "t1": (2.0 * math.pi * 1.0, 2.0 * math.pi * 3.0),
    "t2": (2.0 * math.pi * 6.0, 2.0 * math.pi * 12.0),
}
DEFAULT_NOISE_SD = 0.05

PEMS_POINTS_PER_DAY = 288


class DataError(ValueError):
    pass


@dataclass
class TimeSeriesSample:
    times: np.ndarray
    values: np.ndarray
    split_index: int
    grid_times: np.ndarray | None = None
    grid_values: np.ndarray | None = None
    meta: dict = field(default_factory=dict)
    role: str = "train"

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.grid_times is not None:
            self.grid_times = np.asarray(self.grid_times, dtype=np.float64)
            self.grid_values = np.asarray(self.grid_values, dtype=np.float64)
        self.validate()

    def validate(self):
        n = len(self.times)
        if len(self.values) != n:
            raise DataError("times and values length mismatch")
        if np.any(np.diff(self.times) <= 0):
            raise DataError("times must be strictly increasing")
        if not (0 < self.split_index < n):
            raise DataError(f"split_index {self.split_index} out of (0, {n})")
        if self.grid_times is not None:
            steps = np.diff(self.grid_times)
            if len(steps) and not np.allclose(steps, steps[0], rtol=1e-9, atol=1e-12):
                raise DataError("dense grid must be regular")

    @property
    def observed_times(self):
        return self.times[: self.split_index]

    @property
    def observed_values(self):
        return self.values[: self.split_index]

    @property
    def forecast_times(self):
        return self.times[self.split_index:]

    @property
    def forecast_values(self):
        return self.values[self.split_index:]


@dataclass
class Normalizer:
    shift: float
    scale: float

    def apply(self, values):
        return (np.asarray(values, dtype=np.float64) - self.shift) / self.scale

    def invert(self, values):
        return np.asarray(values, dtype=np.float64) * self.scale + self.shift


@dataclass
class Dataset:
    samples: list
    normalizer: Normalizer | None = None

    @property
    def train(self):
        return [s for s in self.samples if s.role == "train"]

    @property
    def test(self):
        return [s for s in self.samples if s.role == "test"]


def gen_synthetic(c, t1, t2, noise_sd=DEFAULT_NOISE_SD, n_grid=1000,
                  n_points=200, seed=0, role="train"):
    """One trend-plus-two-seasonalities sample: exp(c x) + sin(t1 x) + sin(t2 x).

    The dense grid (n_grid points over [0, 2]) stays noise-free; Gaussian
    noise is added only to the irregularly sampled points. The sample keeps
    the first half of its points as the observed prefix.
    """
    if t1 >= t2:
        raise DataError(f"t1 ({t1}) must be below t2 ({t2})")
    if n_grid < 2 * n_points:
        raise DataError("n_grid must be at least twice n_points")
    if noise_sd < 0:
        raise DataError("noise_sd must be non-negative")
    rng = np.random.default_rng(seed)
    grid_x = np.linspace(0.0, TIME_SPAN, n_grid)
    grid_y = np.exp(c * grid_x) + np.sin(t1 * grid_x) + np.sin(t2 * grid_x)
    idx = np.sort(rng.choice(n_grid, size=n_points, replace=False))
    values = grid_y[idx].copy()
    if noise_sd > 0:
        values += rng.normal(0.0, noise_sd, size=n_points)
    return TimeSeriesSample(
        times=grid_x[idx],
        values=values,
        split_index=n_points // 2,
        grid_times=grid_x,
        grid_values=grid_y,
        meta={"c": c, "t1": t1, "t2": t2, "noise_sd": noise_sd},
        role=role,
    )


def gen_synthetic_suite(n=1000, param_ranges=None, seed=0,
                        noise_sd=DEFAULT_NOISE_SD, n_grid=1000, n_points=200):
    """n samples with parameters drawn uniformly from the ranges; 80/20 split."""
    ranges = dict(DEFAULT_PARAM_RANGES)
    if param_ranges:
        ranges.update(param_ranges)
    rng = np.random.default_rng(seed)
    n_train = int(round(0.8 * n))
    samples = []
    for i in range(n):
        c = rng.uniform(*ranges["c"])
        t1 = rng.uniform(*ranges["t1"])
        t2 = rng.uniform(*ranges["t2"])
        child_seed = int(rng.integers(0, 2**31 - 1))
        samples.append(
            gen_synthetic(c, t1, t2, noise_sd, n_grid, n_points,
                          seed=child_seed,
                          role="train" if i < n_train else "test")
        )
    return Dataset(samples=samples)


def ingest_pems(csv_path, sensor_id, date_start=None, date_end=None):
    """Build a per-day dataset from a flow CSV (timestamp, sensor_id, flow).

    Only days with all 288 five-minute readings survive; each surviving day
    becomes one sample of 288 points (split at 144), normalized to the [0, 2]
    time span, with the day's own series as its dense grid. Days split 80/20
    chronologically.
    """
    from datetime import datetime

    by_day = {}
    with open(csv_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{csv_path}: empty file")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise DataError(f"{csv_path}:{lineno}: expected 3 columns, got {len(row)}")
            ts_raw, sid, flow_raw = row
            if sid != str(sensor_id):
                continue
            try:
                ts = datetime.fromisoformat(ts_raw)
                flow = float(flow_raw)
            except ValueError as e:
                raise DataError(f"{csv_path}:{lineno}: {e}") from None
            day = ts.date()
            if date_start is not None and day < date_start:
                continue
            if date_end is not None and day > date_end:
                continue
            slot = (ts.hour * 60 + ts.minute) // 5
            by_day.setdefault(day, {})[slot] = flow

    complete = []
    for day in sorted(by_day):
        slots = by_day[day]
        if len(slots) == PEMS_POINTS_PER_DAY and set(slots) == set(
            range(PEMS_POINTS_PER_DAY)
        ):
            complete.append((day, np.array([slots[i] for i in range(PEMS_POINTS_PER_DAY)])))
    if not complete:
        raise DataError(f"{csv_path}: no complete days for sensor {sensor_id}")

    n_train = int(math.floor(0.8 * len(complete)))
    times = np.linspace(0.0, TIME_SPAN, PEMS_POINTS_PER_DAY)
    samples = []
    for i, (day, flows) in enumerate(complete):
        samples.append(
            TimeSeriesSample(
                times=times.copy(),
                values=flows.astype(np.float64),
                split_index=PEMS_POINTS_PER_DAY // 2,
                grid_times=times.copy(),
                grid_values=flows.astype(np.float64),
                meta={"sensor": str(sensor_id), "day": day.isoformat()},
                role="train" if i < n_train else "test",
            )
        )
    return Dataset(samples=samples)


def irregular_subsample(sample, n_keep, seed=0):
    """Keep a sorted uniform subset of points, proportionally on each side."""
    n = len(sample.times)
    if n_keep < 2:
        raise DataError("n_keep must be at least 2")
    if n_keep > n:
        raise DataError(f"n_keep {n_keep} exceeds sample length {n}")
    if n_keep == n:
        return sample
    rng = np.random.default_rng(seed)
    keep_obs = max(1, int(round(n_keep * sample.split_index / n)))
    keep_fc = n_keep - keep_obs
    if keep_fc < 1:
        keep_obs, keep_fc = n_keep - 1, 1
    obs_idx = np.sort(rng.choice(sample.split_index, size=keep_obs, replace=False))
    fc_idx = sample.split_index + np.sort(
        rng.choice(n - sample.split_index, size=keep_fc, replace=False)
    )
    idx = np.concatenate([obs_idx, fc_idx])
    return TimeSeriesSample(
        times=sample.times[idx],
        values=sample.values[idx],
        split_index=keep_obs,
        grid_times=sample.grid_times,
        grid_values=sample.grid_values,
        meta=dict(sample.meta),
        role=sample.role,
    )


def fit_normalizer(dataset):
    """Affine normalizer from the training split's values only."""
    train_values = np.concatenate([s.values for s in dataset.train])
    shift = float(train_values.mean())
    scale = float(train_values.std())
    if scale < 1e-12:
        raise DataError("degenerate value scale on training split")
    return Normalizer(shift=shift, scale=scale)


def normalize(dataset):
    """Dataset copy with values (and dense grids) affinely normalized."""
    norm = dataset.normalizer or fit_normalizer(dataset)
    samples = []
    for s in dataset.samples:
        samples.append(
            TimeSeriesSample(
                times=s.times.copy(),
                values=norm.apply(s.values),
                split_index=s.split_index,
                grid_times=None if s.grid_times is None else s.grid_times.copy(),
                grid_values=None if s.grid_values is None else norm.apply(s.grid_values),
                meta=dict(s.meta),
                role=s.role,
            )
        )
    return Dataset(samples=samples, normalizer=norm)


def denormalize(values, normalizer):
    return normalizer.invert(values)


# ---------------------------------------------------------------------------
# dataset files: JSON-lines, one sample per line


def save_dataset(dataset, path):
    """Atomic write (temp file + rename) of the JSON-lines dataset."""
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            for s in dataset.samples:
                rec = {
                    "times": s.times.tolist(),
                    "values": s.values.tolist(),
                    "split": s.split_index,
                    "meta": s.meta,
                    "role": s.role,
                }
                if s.grid_times is not None:
                    rec["grid_times"] = s.grid_times.tolist()
                    rec["grid_values"] = s.grid_values.tolist()
                fh.write(json.dumps(rec) + "\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_dataset(path):
    samples = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError(f"{path}:{lineno}: {e}") from None
            samples.append(
                TimeSeriesSample(
                    times=rec["times"],
                    values=rec["values"],
                    split_index=rec["split"],
                    grid_times=rec.get("grid_times"),
                    grid_values=rec.get("grid_values"),
                    meta=rec.get("meta", {}),
                    role=rec.get("role", "train"),
                )
            )
    return Dataset(samples=samples)
