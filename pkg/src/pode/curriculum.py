"""Stage-wise filtered datasets and the per-stage blend/epoch schedule.

Stage s < k trains on the dense grid filtered at cutoffs[s-1] and re-sampled
at each sample's own irregular time points; stage k trains on the raw data.
Filtering happens on the dense/regular grid because filtering irregular
samples directly is ill-posed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, TimeSeriesSample

DEFAULT_CUTOFFS = (1.5, 9.0)  # cycles per sample span, between the signal bands


class CurriculumError(ValueError):
    pass


@dataclass
class CurriculumPlan:
    k: int = 3
    cutoffs: tuple = DEFAULT_CUTOFFS
    epochs_per_stage: list = field(default_factory=lambda: [100, 100, 100])
    blend_fraction: float = 0.3

    def __post_init__(self):
        self.cutoffs = tuple(float(c) for c in self.cutoffs)
        if self.k < 1:
            raise CurriculumError("k must be at least 1")
        if len(self.cutoffs) != self.k - 1:
            raise CurriculumError(
                f"need k-1={self.k - 1} cutoffs, got {len(self.cutoffs)}"
            )
        if any(b <= a for a, b in zip(self.cutoffs, self.cutoffs[1:])):
            raise CurriculumError("cutoffs must be strictly ascending")
        if len(self.epochs_per_stage) != self.k:
            raise CurriculumError("epochs_per_stage must have k entries")
        if not (0.0 < self.blend_fraction < 1.0):
            raise CurriculumError("blend_fraction must be in (0, 1)")

    @property
    def total_epochs(self):
        return int(sum(self.epochs_per_stage))


def window_length(n_grid, cutoff_cycles):
    """Odd moving-average window implementing the given cutoff.

    The window spans half a period of the cutoff frequency: grid_length /
    (2 * cutoff_cycles) points, rounded to the nearest odd integer.
    """
    q = n_grid / (2.0 * cutoff_cycles)
    w = int(round(q))
    if w % 2 == 0:
        w += 1 if q >= w else -1
    return max(1, w)


def ma_response(n_grid, cutoff_cycles, freq_cycles):
    """Amplitude response of the double-pass window at a given frequency.

    Used as the independent oracle for attenuation claims. The single-pass
    response of a length-w centered moving average at f cycles per span is
    the Dirichlet kernel sin(pi f w / N) / (w sin(pi f / N)); the double pass
    squares it.
    """
    w = window_length(n_grid, cutoff_cycles)
    x = np.pi * freq_cycles / n_grid
    if x == 0:
        return 1.0
    single = np.sin(w * x) / (w * np.sin(x))
    return float(single * single)


def lowpass(dense_values, cutoff_cycles):
    """Double-pass centered moving average on a regular grid.

    Edges are handled by reflection padding; DC gain is exactly 1 (the kernel
    sums to 1 and reflection preserves constants).
    """
    values = np.asarray(dense_values, dtype=np.float64)
    n = values.size
    if cutoff_cycles <= 0:
        raise CurriculumError("cutoff must be positive")
    w = window_length(n, cutoff_cycles)
    if w > n:
        raise CurriculumError(f"window {w} longer than series of length {n}")
    if w == 1:
        return values.copy()
    kernel = np.full(w, 1.0 / w)
    half = w // 2
    out = values
    for _ in range(2):
        padded = np.concatenate([out[half:0:-1], out, out[-2:-half - 2:-1]])
        out = np.convolve(padded, kernel, mode="valid")
    return out


def _resample_indices(sample):
    """Dense-grid index of every sampled time point (exact membership)."""
    idx = np.searchsorted(sample.grid_times, sample.times)
    idx = np.clip(idx, 0, len(sample.grid_times) - 1)
    if not np.allclose(sample.grid_times[idx], sample.times, rtol=0, atol=1e-9):
        raise CurriculumError("sample times do not lie on the dense grid")
    return idx


def stage_dataset(dataset, stage, plan):
    """Dataset for one curriculum stage; stage k is the raw data, untouched."""
    if not (1 <= stage <= plan.k):
        raise CurriculumError(f"stage {stage} out of [1, {plan.k}]")
    if stage == plan.k:
        return dataset
    cutoff = plan.cutoffs[stage - 1]
    samples = []
    for s in dataset.samples:
        if s.grid_times is None:
            raise CurriculumError("stage filtering needs a dense grid per sample")
        filtered = lowpass(s.grid_values, cutoff)
        idx = _resample_indices(s)
        samples.append(
            TimeSeriesSample(
                times=s.times.copy(),
                values=filtered[idx],
                split_index=s.split_index,
                grid_times=s.grid_times.copy(),
                grid_values=filtered,
                meta=dict(s.meta),
                role=s.role,
            )
        )
    return Dataset(samples=samples, normalizer=dataset.normalizer)


def alpha_at(plan, stage, epoch_within_stage):
    """Blend weight schedule: linear ramp over the stage's first epochs, then 1."""
    if stage < 2:
        raise CurriculumError("stage 1 has no blended group")
    budget = plan.epochs_per_stage[stage - 1]
    if not (0 <= epoch_within_stage < budget):
        raise CurriculumError(
            f"epoch {epoch_within_stage} out of [0, {budget}) for stage {stage}"
        )
    ramp = plan.blend_fraction * budget
    return min(1.0, epoch_within_stage / ramp)


def highpass_energy(grid_values, cutoff_cycles):
    """DFT energy strictly above a cutoff (cycles per span); complexity measure."""
    values = np.asarray(grid_values, dtype=np.float64)
    spectrum = np.abs(np.fft.rfft(values)) ** 2
    freqs = np.arange(spectrum.size)  # bin f = f cycles per span
    return float(spectrum[freqs > cutoff_cycles].sum())
