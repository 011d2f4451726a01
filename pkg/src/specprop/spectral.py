"""Power spectra, band splitting, and an ideal bandpass filter bank.

Frequencies are in cycles/sample throughout, so Nyquist is 0.5. Band
splitting produces boundaries f_0 = 0 < ... < f_s = 0.5; each FFT bin
belongs to exactly one half-open band [f_lo, f_hi), with the Nyquist bin
assigned to the last band. That ownership rule makes the filter bank an
exact partition: the band series always sum back to the input.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, FilterError, SplitError

NYQUIST = 0.5

STRATEGIES = ("equal_power", "equal_freq", "exponential")


@dataclass
class PowerSpectrum:
    """One-sided power spectral density of a real series."""

    psd: np.ndarray        # |FFT(x)[k]|^2 / L for k = 0..floor(L/2)
    bin_freqs: np.ndarray  # k / L
    length: int

    @property
    def top_bin(self):
        return len(self.psd) - 1


@dataclass
class BandPartition:
    """Band boundaries in cycles/sample, f_0 = 0 and f_s = Nyquist."""

    boundaries: np.ndarray
    strategy: str

    @property
    def num_bands(self):
        return len(self.boundaries) - 1

    def edges(self, j):
        return float(self.boundaries[j]), float(self.boundaries[j + 1])


@dataclass
class SpectrumExpansion:
    """The band-limited versions of a series plus the unfiltered original.

    Stream k < num_bands is band k; the final stream is the original, so
    there are num_bands + 1 streams in total.
    """

    bands: list = field(repr=False)
    original: np.ndarray = field(repr=False)
    partition: BandPartition = None

    def streams(self):
        return np.stack(self.bands + [self.original])


def compute_psd(values) -> PowerSpectrum:
    x = np.asarray(values, dtype=np.float64)
    if x.ndim != 1 or len(x) < 8:
        raise ContractError(f"compute_psd: need a 1-D series of length >= 8, got shape {x.shape}")
    L = len(x)
    spec = np.fft.fft(x)
    top = L // 2
    psd = np.abs(spec[:top + 1]) ** 2 / L
    return PowerSpectrum(psd=psd, bin_freqs=np.arange(top + 1) / L, length=L)


def _weighted_cumsum(spectrum: PowerSpectrum) -> np.ndarray:
    # the DC term has frequency weight zero, so cumsum == sum from bin 1
    return np.cumsum(spectrum.psd * spectrum.bin_freqs)


def cumulative_power(spectrum: PowerSpectrum, upto_bin: int) -> float:
    """Frequency-weighted cumulative power: sum of psd[i] * f_i for i <= n."""
    if not 0 <= upto_bin <= spectrum.top_bin:
        raise ContractError(f"cumulative_power: bin {upto_bin} outside 0..{spectrum.top_bin}")
    return float(_weighted_cumsum(spectrum)[upto_bin])


def total_weighted_power(spectrum: PowerSpectrum) -> float:
    return cumulative_power(spectrum, spectrum.top_bin)


def split_frequencies(spectrum: PowerSpectrum, num_bands: int, strategy: str) -> BandPartition:
    """Derive band boundaries under one of the three splitting strategies.

    equal_power places boundary j at the smallest bin frequency whose
    cumulative weighted power reaches j/num_bands of the total (discrete
    step-function inverse); duplicate boundaries on spiky spectra are
    repaired by advancing one bin so no band is empty.
    """
    s = int(num_bands)
    if strategy not in STRATEGIES:
        raise ContractError(f"split_frequencies: unknown strategy {strategy!r}")
    if s < 1:
        raise ContractError(f"split_frequencies: need num_bands >= 1, got {s}")
    if spectrum.top_bin + 1 < s + 1:
        raise ContractError(
            f"split_frequencies: {spectrum.top_bin + 1} bins cannot support {s} bands")

    L = spectrum.length
    if strategy == "equal_freq":
        bounds = NYQUIST * np.arange(s + 1) / s
    elif strategy == "exponential":
        inner = NYQUIST * 2.0 ** (np.arange(1, s) - s)
        bounds = np.concatenate(([0.0], inner, [NYQUIST]))
    else:
        H = _weighted_cumsum(spectrum)
        total = H[-1]
        if total <= 0.0:
            raise SplitError("equal_power split undefined: spectrum carries no weighted power")
        targets = total * np.arange(1, s) / s
        bins = np.searchsorted(H, targets, side="left").astype(int)
        # repair collisions: every band must own at least one bin
        top = spectrum.top_bin
        max_inner = top - 1 if L % 2 == 0 else top  # keep boundaries below Nyquist
        prev = 0
        for j in range(s - 1):
            bins[j] = min(max(bins[j], prev + 1), max_inner - (s - 2 - j))
            prev = bins[j]
        bounds = np.concatenate(([0.0], bins / L, [NYQUIST]))
    return BandPartition(boundaries=bounds, strategy=strategy)


def _band_bin_mask(bin_freqs: np.ndarray, f_lo: float, f_hi: float) -> np.ndarray:
    mask = (bin_freqs >= f_lo) & (bin_freqs < f_hi)
    if f_hi >= NYQUIST:
        mask |= bin_freqs == NYQUIST  # Nyquist bin belongs to the last band
    return mask


def bandpass(values, f_lo: float, f_hi: float) -> np.ndarray:
    """Ideal brick-wall bandpass: zero every FFT bin outside [f_lo, f_hi)."""
    if not (0.0 <= f_lo < f_hi <= NYQUIST):
        raise FilterError(f"bandpass: invalid band [{f_lo}, {f_hi}]")
    x = np.asarray(values, dtype=np.float64)
    L = len(x)
    k = np.arange(L)
    folded = np.minimum(k, L - k) / L  # conjugate-symmetric pairs share a frequency
    mask = _band_bin_mask(folded, f_lo, f_hi)
    return np.fft.ifft(np.fft.fft(x) * mask).real


def expand(values, num_bands: int, strategy: str = "equal_power") -> SpectrumExpansion:
    """Split a series into band-limited streams plus the original."""
    x = np.asarray(values, dtype=np.float64)
    spectrum = compute_psd(x)
    partition = split_frequencies(spectrum, num_bands, strategy)
    bands = [bandpass(x, *partition.edges(j)) for j in range(partition.num_bands)]
    return SpectrumExpansion(bands=bands, original=x, partition=partition)


def band_energies(spectrum: PowerSpectrum, partition: BandPartition) -> np.ndarray:
    """Unweighted PSD mass per band (one-sided bins)."""
    return np.array([
        spectrum.psd[_band_bin_mask(spectrum.bin_freqs, *partition.edges(j))].sum()
        for j in range(partition.num_bands)
    ])


def band_weighted_powers(spectrum: PowerSpectrum, partition: BandPartition) -> np.ndarray:
    """Frequency-weighted PSD mass per band (the quantity equal_power balances)."""
    w = spectrum.psd * spectrum.bin_freqs
    return np.array([
        w[_band_bin_mask(spectrum.bin_freqs, *partition.edges(j))].sum()
        for j in range(partition.num_bands)
    ])
