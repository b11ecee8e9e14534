"""Time series containers, loaders, splitting and synthetic benchmarks."""
from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np


class DataError(ValueError):
    """Malformed, empty or inconsistent input data."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TimeSeries:
    """One (possibly irregularly sampled) observation sequence.

    ``values`` has shape (T, D); ``time_index`` holds the original integer
    timestamp of every surviving observation.
    """

    id: str
    values: np.ndarray
    time_index: np.ndarray = None
    label: Optional[int] = None

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[0] < 1:
            raise DataError(f"series {self.id!r}: values must be (T, D) with T >= 1, got {v.shape}")
        ti = np.arange(len(v)) if self.time_index is None else np.array(self.time_index, dtype=np.int64)
        if ti.shape != (len(v),):
            raise DataError(f"series {self.id!r}: time_index length {ti.shape} != T={len(v)}")
        if len(ti) > 1 and np.any(np.diff(ti) <= 0):
            raise DataError(f"series {self.id!r}: time_index must be strictly increasing")
        if ti.size and ti[0] < 0:
            raise DataError(f"series {self.id!r}: negative timestamp")
        object.__setattr__(self, "values", _frozen(v))
        object.__setattr__(self, "time_index", _frozen(ti))
        if self.label is not None:
            object.__setattr__(self, "label", int(self.label))

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def D(self) -> int:
        return self.values.shape[1]

    def with_values(self, values, time_index=None, **kw) -> "TimeSeries":
        return replace(self, values=values, time_index=time_index, **kw)

    def __eq__(self, other):
        if not isinstance(other, TimeSeries):
            return NotImplemented
        return (self.id == other.id and self.label == other.label
                and np.array_equal(self.values, other.values)
                and np.array_equal(self.time_index, other.time_index))

    __hash__ = None


@dataclass(frozen=True)
class Dataset:
    series: tuple
    channel_dim: int
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "series", tuple(self.series))
        for s in self.series:
            if s.D != self.channel_dim:
                raise DataError(f"series {s.id!r} has {s.D} channels, dataset has {self.channel_dim}")

    def __len__(self):
        return len(self.series)

    def __iter__(self):
        return iter(self.series)

    @property
    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.series])

    @property
    def ids(self) -> list:
        return [s.id for s in self.series]

    def subset(self, idx, name=None) -> "Dataset":
        return Dataset(tuple(self.series[i] for i in idx), self.channel_dim, name or self.name)


@dataclass(frozen=True)
class SplitDataset:
    train: Dataset
    val: Dataset
    test: Dataset
    task: str = "anomaly"
    normal_class: Optional[int] = None

    def __post_init__(self):
        seen = {}
        for part in ("train", "val", "test"):
            for sid in getattr(self, part).ids:
                if sid in seen:
                    raise DataError(f"id {sid!r} appears in both {seen[sid]} and {part}")
                seen[sid] = part
        for part in ("val", "test"):
            if any(s.label is None for s in getattr(self, part)):
                raise DataError(f"{part} split has unlabeled series")


@dataclass(frozen=True)
class SamplerConfig:
    beta: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.beta < 1.0:
            raise DataError(f"beta must be in [0, 1), got {self.beta}")


# --------------------------------------------------------------------- loaders

def load_ucr(path, name: str | None = None) -> Dataset:
    """Read a UCR-style TSV file: ``label<TAB>v1<TAB>...<TAB>vT`` per line."""
    path = Path(path)
    series = []
    length = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            toks = line.split("\t") if "\t" in line else line.split(",")
            try:
                label = int(float(toks[0]))
                vals = [float(t) for t in toks[1:]]
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: parse error: {exc}") from None
            if not vals:
                raise DataError(f"{path}:{lineno}: no observations")
            if length is None:
                length = len(vals)
            elif len(vals) != length:
                raise DataError(f"{path}:{lineno}: length {len(vals)} differs from {length}")
            series.append(TimeSeries(f"s{len(series)}", np.array(vals), label=label))
    if not series:
        raise DataError(f"{path}: empty dataset")
    return Dataset(tuple(series), 1, name or path.stem)


def load_multivariate(path, name: str | None = None) -> Dataset:
    """Read the JSON container ``{"channel_dim": D, "series": [...]}``."""
    path = Path(path)
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(doc, dict) or "series" not in doc or "channel_dim" not in doc:
        raise DataError(f"{path}: expected an object with 'channel_dim' and 'series'")
    D = doc["channel_dim"]
    if not isinstance(D, int) or D < 1:
        raise DataError(f"{path}: channel_dim must be a positive integer")
    if not isinstance(doc["series"], list) or not doc["series"]:
        raise DataError(f"{path}: empty dataset")
    out = []
    for k, item in enumerate(doc["series"]):
        if not isinstance(item, dict) or "values" not in item:
            raise DataError(f"{path}: series[{k}] lacks 'values'")
        vals = item["values"]
        if not isinstance(vals, list) or not vals:
            raise DataError(f"{path}: series[{k}] has no observations")
        for t, row in enumerate(vals):
            if not isinstance(row, list) or len(row) != D:
                raise DataError(f"{path}: series[{k}] step {t} has wrong channel dim (expected {D})")
        label = item.get("label")
        if label is not None and not isinstance(label, int):
            raise DataError(f"{path}: series[{k}] label must be int or null")
        try:
            arr = np.array(vals, dtype=float)
        except (TypeError, ValueError):
            raise DataError(f"{path}: series[{k}] has non-numeric values") from None
        tidx = item.get("time_index")
        try:
            out.append(TimeSeries(str(item.get("id", f"s{k}")), arr,
                                  None if tidx is None else np.asarray(tidx, dtype=int), label=label))
        except (TypeError, ValueError) as exc:
            raise DataError(f"{path}: series[{k}]: {exc}") from None
    if len({s.id for s in out}) != len(out):
        raise DataError(f"{path}: duplicate series ids")
    return Dataset(tuple(out), D, name or path.stem)


def load(path, fmt: str = "ucr") -> Dataset:
    if fmt == "ucr":
        return load_ucr(path)
    if fmt == "mvjson":
        return load_multivariate(path)
    raise DataError(f"unknown format {fmt!r}")


def save_ucr(dataset: Dataset, path):
    if dataset.channel_dim != 1:
        raise DataError("UCR TSV holds univariate series only")
    with open(path, "w") as fh:
        for s in dataset:
            lab = 0 if s.label is None else s.label
            fh.write("\t".join([str(lab)] + [repr(float(v)) for v in s.values[:, 0]]) + "\n")


def save_multivariate(dataset: Dataset, path):
    doc = {"channel_dim": dataset.channel_dim,
           "series": [{"id": s.id, "label": s.label, "values": s.values.tolist(),
                       "time_index": s.time_index.tolist()} for s in dataset]}
    Path(path).write_text(json.dumps(doc))


# ---------------------------------------------------------------- preprocessing

def znormalize(dataset: Dataset) -> Dataset:
    """Per-series, per-channel zero mean and unit (population) std."""
    out = []
    for s in dataset:
        v = s.values
        mu = v.mean(axis=0)
        sd = v.std(axis=0)
        const = sd < 1e-12
        z = np.where(const, 0.0, (v - mu) / np.where(const, 1.0, sd))
        out.append(s.with_values(z, s.time_index))
    return Dataset(tuple(out), dataset.channel_dim, dataset.name)


def irregular_sample(series: TimeSeries, cfg: SamplerConfig) -> TimeSeries:
    """Drop floor(beta * T) timestamps uniformly at random."""
    T = series.T
    n_drop = math.floor(cfg.beta * T)
    if n_drop >= T:
        raise DataError(f"beta={cfg.beta} would remove all {T} points of {series.id!r}")
    if n_drop == 0:
        return series
    rng = np.random.default_rng(cfg.seed)
    keep = np.sort(rng.choice(T, size=T - n_drop, replace=False))
    return series.with_values(series.values[keep], series.time_index[keep])


def irregular_sample_dataset(dataset: Dataset, beta: float, seed: int) -> Dataset:
    if beta == 0:
        return dataset
    seeds = np.random.SeedSequence(seed).generate_state(len(dataset))
    out = tuple(irregular_sample(s, SamplerConfig(beta, int(sd))) for s, sd in zip(dataset, seeds))
    return Dataset(out, dataset.channel_dim, dataset.name)


def most_frequent_class(dataset: Dataset) -> int:
    counts = Counter(s.label for s in dataset if s.label is not None)
    if not counts:
        raise DataError("dataset has no labels")
    top = max(counts.values())
    return min(c for c, n in counts.items() if n == top)


def _counts(n: int, ratios: Sequence[float]) -> tuple[int, int, int]:
    a = int(round(ratios[0] * n))
    b = int(round(ratios[1] * n))
    b = min(b, n - a)
    return a, b, n - a - b


def split(dataset: Dataset, task: str = "anomaly", normal_class: Optional[int] = None,
          contamination: float = 0.0, ratios=(0.5, 0.2, 0.3), seed: int = 0) -> SplitDataset:
    """Train/val/test split.

    Anomaly task: train holds normal-class series only, with a fraction
    ``contamination`` of its members swapped for anomalies. The remaining
    normals follow the val/test ratio and the remaining anomalies are split
    in the same val:test proportion. Labels are rewritten to 0 (normal) and
    1 (anomaly).

    Cluster task: per-class stratified split with the original labels.
    """
    if len(ratios) != 3 or min(ratios) < 0 or not math.isclose(sum(ratios), 1.0, abs_tol=1e-9):
        raise DataError(f"split ratios must be three non-negative numbers summing to 1, got {ratios}")
    if not 0.0 <= contamination <= 1.0:
        raise DataError(f"contamination must be in [0, 1], got {contamination}")
    if any(s.label is None for s in dataset):
        raise DataError("split needs a fully labeled dataset")
    rng = np.random.default_rng(seed)
    labels = dataset.labels
    if task == "cluster":
        parts = ([], [], [])
        for c in sorted(set(labels.tolist())):
            idx = rng.permutation(np.flatnonzero(labels == c))
            a, b, _ = _counts(len(idx), ratios)
            parts[0].extend(idx[:a])
            parts[1].extend(idx[a:a + b])
            parts[2].extend(idx[a + b:])
        tr, va, te = (dataset.subset(sorted(p)) for p in parts)
        return SplitDataset(tr, va, te, task="cluster")
    if task != "anomaly":
        raise DataError(f"unknown task {task!r}")

    if normal_class is None:
        normal_class = most_frequent_class(dataset)
    if normal_class not in set(labels.tolist()):
        raise DataError(f"normal class {normal_class} not present in dataset")
    normals = rng.permutation(np.flatnonzero(labels == normal_class))
    anomalies = rng.permutation(np.flatnonzero(labels != normal_class))
    n_train, n_val, _ = _counts(len(normals), ratios)
    n_cont = int(round(contamination * n_train))
    if n_cont > len(anomalies):
        raise DataError(f"contamination needs {n_cont} anomalies, dataset has {len(anomalies)}")
    train_idx = list(normals[:n_train - n_cont]) + list(anomalies[:n_cont])
    rest_norm = normals[n_train - n_cont:]
    rest_anom = anomalies[n_cont:]
    # the normal displaced by contamination is not reused, so val/test keep
    # their nominal normal counts
    rest_norm = rest_norm[n_cont:] if n_cont else rest_norm
    nv = n_val
    vt = ratios[1] + ratios[2]
    na = int(round(len(rest_anom) * ratios[1] / vt)) if vt > 0 else 0
    val_idx = list(rest_norm[:nv]) + list(rest_anom[:na])
    test_idx = list(rest_norm[nv:]) + list(rest_anom[na:])

    def binarize(idx, name):
        return Dataset(tuple(replace(dataset.series[i], label=int(labels[i] != normal_class))
                             for i in sorted(idx)), dataset.channel_dim, name)

    return SplitDataset(binarize(train_idx, "train"), binarize(val_idx, "val"),
                        binarize(test_idx, "test"), task="anomaly", normal_class=int(normal_class))


# ------------------------------------------------------------------- synthetic

def make_synthetic_sine(n_normal: int = 300, n_anomalous: int = 100, T: int = 64,
                        noise_span=(0.1, 0.25), seed: int = 0) -> Dataset:
    """Random-phase sines; anomalies get U(-1, 1) noise over one window."""
    if T < 8:
        raise DataError("synthetic series need T >= 8")
    lo, hi = noise_span
    rng = np.random.default_rng(seed)
    t = np.arange(T)
    out = []
    for i in range(n_normal + n_anomalous):
        phase = rng.uniform(0, T)
        k = rng.integers(1, 3)
        x = np.sin(2 * np.pi * k * (t + phase) / T)
        label = 0
        if i >= n_normal:
            width = max(1, int(round(rng.uniform(lo, hi) * T)))
            start = rng.integers(0, T - width + 1)
            x = x.copy()
            x[start:start + width] += rng.uniform(-1.0, 1.0, size=width)
            label = 1
        out.append(TimeSeries(f"s{i}", x, label=label))
    return Dataset(tuple(out), 1, "synthetic_sine")
