"""Built-in synthetic benchmark tasks.

The confounder task mirrors the failure mode the graph model targets:
every series carries a strong low-frequency component whose amplitude and
phase are independent of the class, while the class identity lives in one
mid-frequency band. Whole-series distance metrics latch onto the
confounder; band-aware models can isolate the informative band.
"""

from __future__ import annotations

import numpy as np

from .data import Dataset, TimeSeries, znormalize

_TEST_SEED_OFFSET = 104729


def class_tone_bins(n_classes: int, length: int, bimodal=False):
    """Mid-band candidate tone bins per class.

    With ``bimodal`` and two classes the layout is prototype-hostile:
    class 0 draws from an outer pair of bins and class 1 sits at their
    midpoint, so averaging class-0 members lands on class 1's signature
    while pairwise comparisons are unaffected.
    """
    lo = max(4, int(round(0.14 * length)))
    if n_classes == 1:
        return [[lo]]
    if n_classes == 2 and bimodal:
        span = max(4, int(round(0.09 * length)))
        return [[lo, lo + span], [lo + span // 2]]
    hi = min(int(round(0.48 * length)), length // 2 - 1)
    step = max(2, (hi - lo) // (n_classes - 1))
    return [[lo + i * step] for i in range(n_classes)]


def make_confounder_dataset(n_classes=6, per_class=40, length=64, seed=0,
                            split="train", confounder_amp=(1.0, 1.6),
                            confounder_bins=(1, 2, 3), tone_amp=1.0,
                            tone_jitter=1, sideband_ratio=0.45, bimodal=False,
                            distractor_amp=None, distractor_bins=None,
                            noise_sigma=0.15, name="synthetic") -> Dataset:
    """Class tone blob in a mid band + class-independent nuisance.

    Each series carries its class's tone plus a weaker sideband one bin up,
    so the class feature has spectral width: single-bin band splits
    fragment it. The low-frequency confounder defeats raw-distance
    matching. All nuisance draws are independent of the class label.
    """
    rng = np.random.default_rng(seed)
    t = np.arange(length)
    bases = class_tone_bins(n_classes, length, bimodal=bimodal)
    series = []
    order = rng.permutation(n_classes * per_class)
    specs = [(c, i) for c in range(n_classes) for i in range(per_class)]
    for sid, pos in enumerate(order):
        cls, _ = specs[pos]
        tone_bin = int(rng.choice(np.array(bases[cls])))
        tone_bin += (int(rng.integers(-tone_jitter, tone_jitter + 1))
                     if tone_jitter else 0)
        conf_bin = rng.choice(np.array(confounder_bins))
        conf_amp = rng.uniform(*confounder_amp)
        x = (tone_amp * np.sin(2 * np.pi * tone_bin * t / length
                               + rng.uniform(0, 2 * np.pi))
             + conf_amp * np.sin(2 * np.pi * conf_bin * t / length
                                 + rng.uniform(0, 2 * np.pi))
             + rng.normal(0, noise_sigma, length))
        if sideband_ratio:
            x = x + sideband_ratio * tone_amp * np.sin(
                2 * np.pi * (tone_bin + 1) * t / length
                + rng.uniform(0, 2 * np.pi))
        if distractor_amp is not None:
            bins = distractor_bins or tuple(range(int(0.34 * length),
                                                  int(0.45 * length)))
            x = x + rng.uniform(*distractor_amp) * np.sin(
                2 * np.pi * rng.choice(np.array(bins)) * t / length
                + rng.uniform(0, 2 * np.pi))
        series.append(TimeSeries(values=znormalize(x), label=cls, source_id=sid))
    return Dataset(name=name, series=series, split=split)


def make_separable_dataset(n_classes=2, per_class=40, length=32, seed=0,
                           split="train", noise_sigma=0.05, name="separable") -> Dataset:
    """Trivially separable tones, no confounder: converges in a few steps."""
    rng = np.random.default_rng(seed)
    t = np.arange(length)
    bins = np.linspace(2, length // 2 - 2, n_classes).round().astype(int)
    series = []
    sid = 0
    for cls in range(n_classes):
        for _ in range(per_class):
            phase = rng.uniform(0, 2 * np.pi)
            x = np.sin(2 * np.pi * bins[cls] * t / length + phase)
            x = x + rng.normal(0, noise_sigma, length)
            series.append(TimeSeries(values=znormalize(x), label=cls, source_id=sid))
            sid += 1
    return Dataset(name=name, series=series, split=split)


def synthetic_pair(kind="synthetic", seed=0, **kwargs):
    """Train/test dataset pair for a built-in generator name."""
    makers = {
        "synthetic": make_confounder_dataset,
        "separable": make_separable_dataset,
    }
    try:
        maker = makers[kind]
    except KeyError:
        raise ValueError(f"unknown builtin dataset {kind!r}") from None
    train = maker(seed=seed, split="train", **kwargs)
    test = maker(seed=seed + _TEST_SEED_OFFSET, split="test", **kwargs)
    return train, test
