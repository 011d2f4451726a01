"""Dataset loading, episode sampling, and band-limited noise injection.

UCR-style files hold one series per line, label first, tab- or
comma-separated. Series are z-normalized at load time and class labels are
remapped to 0..C-1 in first-appearance order. Episodes carry episode-local
labels 0..N-1 so downstream one-hot encoding needs no lookup table.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import spectral
from .errors import EpisodeError, LoadError, NoiseError

NOISE_BAND_PRESETS = {
    # fractions of Nyquist
    "low": (0.0, 1.0 / 6.0),
    "mid": (1.0 / 6.0, 1.0 / 2.0),
    "high": (1.0 / 2.0, 1.0),
}


@dataclass
class TimeSeries:
    values: np.ndarray
    label: int
    source_id: int = -1

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)

    def __len__(self):
        return len(self.values)


@dataclass
class Dataset:
    name: str
    series: list
    split: str = "train"

    @property
    def classes(self):
        return sorted({ts.label for ts in self.series})

    @property
    def length(self):
        return len(self.series[0].values) if self.series else 0

    def by_class(self):
        groups = {}
        for i, ts in enumerate(self.series):
            groups.setdefault(ts.label, []).append(i)
        return groups

    def __len__(self):
        return len(self.series)


@dataclass
class Episode:
    """One few-shot task. Labels here are episode-local ids 0..way-1."""

    support: list  # (TimeSeries, local_label)
    query: list    # (TimeSeries, local_label)
    way: int
    shot: int

    def support_matrix(self):
        return np.stack([ts.values for ts, _ in self.support])

    def query_matrix(self):
        return np.stack([ts.values for ts, _ in self.query])

    def support_labels(self):
        return np.array([y for _, y in self.support], dtype=np.int64)

    def query_labels(self):
        return np.array([y for _, y in self.query], dtype=np.int64)


@dataclass
class NoiseSpec:
    """Band-limited Gaussian noise at a target SNR.

    ``band`` is a preset name or an explicit (f_lo, f_hi) pair in fractions
    of Nyquist. ``snr_db = math.inf`` disables injection entirely.
    """

    band: object = "high"
    snr_db: float = 10.0

    def __post_init__(self):
        f_lo, f_hi = self.edges()
        if not (0.0 <= f_lo < f_hi <= 1.0):
            raise NoiseError(f"invalid noise band {self.band!r}")
        if math.isnan(self.snr_db) or (math.isinf(self.snr_db) and self.snr_db < 0):
            raise NoiseError("snr_db must be finite (or +inf to disable)")

    def edges(self):
        if isinstance(self.band, str):
            try:
                return NOISE_BAND_PRESETS[self.band]
            except KeyError:
                raise NoiseError(f"unknown noise band preset {self.band!r}") from None
        f_lo, f_hi = self.band
        return float(f_lo), float(f_hi)


def znormalize(values):
    """Zero-mean unit-variance per series; exactly-constant rows become zeros."""
    x = np.asarray(values, dtype=np.float64)
    centred = x - x.mean()
    std = centred.std()
    if std == 0.0:
        return np.zeros_like(x)
    return centred / std


def load_ucr(path, fmt=None, split=None, name=None) -> Dataset:
    """Load a UCR-format file (label first on each line).

    ``fmt`` is "tsv" or "csv"; by default it is inferred from the file
    suffix (2018 archives are tab-separated, 2015 comma-separated). The
    split defaults from the conventional _TRAIN/_TEST filename marker.
    """
    path = Path(path)
    if not path.exists():
        raise LoadError(f"no such file: {path}")
    if fmt is None:
        fmt = "csv" if path.suffix.lower() == ".csv" else "tsv"
    if fmt not in ("tsv", "csv"):
        raise LoadError(f"unknown format {fmt!r}")
    sep = "\t" if fmt == "tsv" else ","
    if split is None:
        split = "test" if "TEST" in path.stem.upper() else "train"
    if name is None:
        name = path.stem.split("_")[0]

    rows = []
    raw_labels = []
    expected_len = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            tokens = line.split(sep)
            try:
                parsed = np.array([float(tok) for tok in tokens])
            except ValueError as exc:
                raise LoadError(f"line {lineno}: non-numeric token ({exc})") from None
            if not np.all(np.isfinite(parsed)):
                raise LoadError(f"line {lineno}: NaN/Inf sample rejected")
            values = parsed[1:]
            if len(values) < 8:
                raise LoadError(f"line {lineno}: series shorter than 8 samples")
            if expected_len is None:
                expected_len = len(values)
            elif len(values) != expected_len:
                raise LoadError(
                    f"line {lineno}: ragged row ({len(values)} values, expected {expected_len})")
            raw_labels.append(parsed[0])
            rows.append(values)
    if not rows:
        raise LoadError(f"empty dataset file: {path}")

    remap = {}
    series = []
    for i, (raw, values) in enumerate(zip(raw_labels, rows)):
        label = remap.setdefault(raw, len(remap))
        series.append(TimeSeries(values=znormalize(values), label=label, source_id=i))
    return Dataset(name=name, series=series, split=split)


def save_dataset(dataset: Dataset, path):
    """Lossless float64 cache dump (npz)."""
    np.savez(
        path,
        values=np.stack([ts.values for ts in dataset.series]),
        labels=np.array([ts.label for ts in dataset.series], dtype=np.int64),
        source_ids=np.array([ts.source_id for ts in dataset.series], dtype=np.int64),
        name=np.array(dataset.name),
        split=np.array(dataset.split),
    )


def load_dataset_cache(path) -> Dataset:
    with np.load(path) as blob:
        series = [
            TimeSeries(values=v, label=int(y), source_id=int(s))
            for v, y, s in zip(blob["values"], blob["labels"], blob["source_ids"])
        ]
        return Dataset(name=str(blob["name"]), series=series, split=str(blob["split"]))


def sample_episode(dataset: Dataset, way: int, shot: int, queries_per_class: int,
                   rng: np.random.Generator) -> Episode:
    """Draw an N-way K-shot episode without replacement, deterministically."""
    groups = dataset.by_class()
    if len(groups) < way:
        raise EpisodeError(
            f"dataset {dataset.name!r} has {len(groups)} classes, need {way}")
    need = shot + queries_per_class
    deficient = sorted(c for c, idx in groups.items() if len(idx) < need)
    eligible = sorted(c for c, idx in groups.items() if len(idx) >= need)
    if len(eligible) < way:
        raise EpisodeError(
            f"classes {deficient} have fewer than {need} series "
            f"(shot {shot} + queries {queries_per_class})")
    chosen = rng.choice(np.array(eligible), size=way, replace=False)
    support, query = [], []
    for local, cls in enumerate(chosen):
        idx = np.array(groups[int(cls)])
        picked = rng.choice(idx, size=need, replace=False)
        for i in picked[:shot]:
            support.append((dataset.series[int(i)], local))
        for i in picked[shot:]:
            query.append((dataset.series[int(i)], local))
    return Episode(support=support, query=query, way=way, shot=shot)


def add_band_noise(series: TimeSeries, spec: NoiseSpec, rng: np.random.Generator) -> TimeSeries:
    """Add band-limited white Gaussian noise at the requested SNR."""
    if math.isinf(spec.snr_db) and spec.snr_db > 0:
        return TimeSeries(values=series.values.copy(), label=series.label,
                          source_id=series.source_id)
    x = series.values
    signal_power = float(np.mean(x ** 2))
    if signal_power == 0.0:
        raise NoiseError("zero-power series: SNR undefined")
    f_lo, f_hi = spec.edges()
    white = rng.standard_normal(len(x))
    shaped = spectral.bandpass(white, f_lo * spectral.NYQUIST, f_hi * spectral.NYQUIST)
    noise_power = float(np.mean(shaped ** 2))
    if noise_power == 0.0:
        raise NoiseError(f"band {spec.band!r} contains no FFT bins at length {len(x)}")
    target = signal_power * 10.0 ** (-spec.snr_db / 10.0)
    shaped *= math.sqrt(target / noise_power)
    return TimeSeries(values=x + shaped, label=series.label, source_id=series.source_id)
