"""Few-shot time-series classification with spectral band expansion and
graph label propagation, plus classical 1-NN baselines."""

from .data import Dataset, Episode, NoiseSpec, TimeSeries, load_ucr, sample_episode
from .engine import RunConfig, RunMetrics, ablate, evaluate, train
from .graphnet import ModelConfig, episode_forward, init_model, prepare_episode
from .spectral import (BandPartition, PowerSpectrum, SpectrumExpansion,
                       bandpass, compute_psd, expand, split_frequencies)

__version__ = "0.1.0"

__all__ = [
    "Dataset", "Episode", "NoiseSpec", "TimeSeries", "load_ucr", "sample_episode",
    "RunConfig", "RunMetrics", "ablate", "evaluate", "train",
    "ModelConfig", "episode_forward", "init_model", "prepare_episode",
    "BandPartition", "PowerSpectrum", "SpectrumExpansion",
    "bandpass", "compute_psd", "expand", "split_frequencies",
    "__version__",
]
