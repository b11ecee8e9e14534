"""Training-set augmentation (scaling, shifting, time-warping) and
negative-sample generation for the contrastive loss."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import Dataset, TimeSeries

AMP_RANGE = (0.5, 1.8)
SHIFT_RANGE = (-10, 10)
NAUG_RANGE = (0, 100)
KINDS = ("scaling", "shifting", "timewarp")


class AugmentError(ValueError):
    pass


def warp_bounds(T: int) -> tuple[int, int]:
    """Integer range [ceil(T/10), floor(T/4)] for the number of warped steps."""
    return math.ceil(T / 10), math.floor(T / 4)


@dataclass(frozen=True)
class AugmentParams:
    kind: str = "scaling"
    n_aug: int = 0
    h_amp: float = 1.0
    h_shift: int = 0
    # fraction of T; the integer count is resolved per series within warp_bounds
    h_tm_frac: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise AugmentError(f"unknown augmentation {self.kind!r}")
        if not NAUG_RANGE[0] <= self.n_aug <= NAUG_RANGE[1]:
            raise AugmentError(f"n_aug {self.n_aug} outside {NAUG_RANGE}")
        if self.kind == "scaling" and not AMP_RANGE[0] <= self.h_amp <= AMP_RANGE[1]:
            raise AugmentError(f"h_amp {self.h_amp} outside {AMP_RANGE}")
        if self.kind == "shifting" and not SHIFT_RANGE[0] <= self.h_shift <= SHIFT_RANGE[1]:
            raise AugmentError(f"h_shift {self.h_shift} outside {SHIFT_RANGE}")
        if self.kind == "timewarp" and not 0.1 <= self.h_tm_frac <= 0.25:
            raise AugmentError(f"h_tm_frac {self.h_tm_frac} outside [0.1, 0.25]")


def scale(series: TimeSeries, h_amp: float) -> TimeSeries:
    if not AMP_RANGE[0] <= h_amp <= AMP_RANGE[1]:
        raise AugmentError(f"h_amp {h_amp} outside {AMP_RANGE}")
    return series.with_values(series.values * h_amp, series.time_index)


def shift(series: TimeSeries, h_shift: int) -> TimeSeries:
    """Cyclic rotation; positive moves values to the right."""
    if not SHIFT_RANGE[0] <= h_shift <= SHIFT_RANGE[1]:
        raise AugmentError(f"h_shift {h_shift} outside {SHIFT_RANGE}")
    if abs(h_shift) >= series.T:
        raise AugmentError(f"|h_shift|={abs(h_shift)} must be < T={series.T}")
    return series.with_values(np.roll(series.values, h_shift, axis=0), series.time_index)


def time_warp(series: TimeSeries, h_tm: int, seed: int = 0, marks=None) -> TimeSeries:
    """Speed up (delete) or slow down (duplicate) ``h_tm`` random timestamps.

    ``marks`` optionally fixes the per-timestamp choice (True = slow down);
    otherwise each is a fair coin. The result is re-indexed 0..T'-1 since
    warped series no longer line up with the original clock.
    """
    T = series.T
    lo, hi = warp_bounds(T)
    if not lo <= h_tm <= hi:
        raise AugmentError(f"h_tm {h_tm} outside [{lo}, {hi}] for T={T}")
    rng = np.random.default_rng(seed)
    chosen = rng.choice(T, size=h_tm, replace=False)
    slow = rng.random(h_tm) < 0.5 if marks is None else np.asarray(marks, bool)
    action = np.zeros(T, dtype=int)        # 0 keep, 1 slow (duplicate), -1 speed (drop)
    action[chosen] = np.where(slow, 1, -1)
    rows = []
    for t in range(T):
        if action[t] == 1:
            rows.append(series.values[t])
        if action[t] != -1:
            rows.append(series.values[t])
    if not rows:
        rows.append(series.values[0])
    return series.with_values(np.array(rows), None)


def apply(series: TimeSeries, params: AugmentParams, seed: int) -> TimeSeries | None:
    if params.kind == "scaling":
        return scale(series, params.h_amp)
    if params.kind == "shifting":
        if abs(params.h_shift) >= series.T:
            return None
        return shift(series, params.h_shift)
    lo, hi = warp_bounds(series.T)
    if hi < max(lo, 1):
        return None
    h_tm = int(np.clip(round(params.h_tm_frac * series.T), max(lo, 1), hi))
    return time_warp(series, h_tm, seed)


def augment_dataset(train: Dataset, params: AugmentParams) -> Dataset:
    """Append ``n_aug`` augmented copies of uniformly drawn training series."""
    if params.n_aug == 0 or len(train) == 0:
        return train
    rng = np.random.default_rng(params.seed)
    src = rng.integers(0, len(train), size=params.n_aug)
    seeds = rng.integers(0, 2**31 - 1, size=params.n_aug)
    taken = set(train.ids)
    extra = []
    for k, (i, sd) in enumerate(zip(src, seeds)):
        base = train.series[i]
        new = apply(base, params, int(sd))
        if new is None:
            new = base
        sid = f"{base.id}~aug{k}"
        while sid in taken:
            sid += "_"
        taken.add(sid)
        extra.append(TimeSeries(sid, new.values, new.time_index, base.label))
    return Dataset(train.series + tuple(extra), train.channel_dim, train.name)


def negative_window(T: int) -> tuple[int, int]:
    return max(1, T // 10), max(1, math.ceil(T / 4))


def gen_negative(series: TimeSeries, seed: int = 0, return_flag: bool = False):
    """Copy of ``series`` with one contiguous window resampled uniformly
    within the series' own per-channel [min, max]."""
    T = series.T
    if T < 4:
        raise AugmentError(f"negative generation needs T >= 4, got {T}")
    rng = np.random.default_rng(seed)
    lo_w, hi_w = negative_window(T)
    width = int(rng.integers(lo_w, hi_w + 1))
    start = int(rng.integers(0, T - width + 1))
    v = series.values
    vmin, vmax = v.min(axis=0), v.max(axis=0)
    out = v.copy()
    out[start:start + width] = rng.uniform(vmin, vmax, size=(width, series.D))
    degenerate = bool(np.all(vmax - vmin == 0))
    neg = series.with_values(out, series.time_index)
    if return_flag:
        return neg, degenerate
    return neg


def negatives_for(dataset: Dataset, seed: int) -> list[TimeSeries]:
    seeds = np.random.SeedSequence(seed).generate_state(len(dataset))
    out = []
    for s, sd in zip(dataset, seeds):
        if s.T < 4:
            out.append(s)   # too short to corrupt; the pair then carries no signal
        else:
            out.append(gen_negative(s, int(sd)))
    return out
