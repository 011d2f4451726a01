"""Walk through the spectral machinery on a single series.

Builds a two-tone signal, computes its power spectrum, derives band
boundaries under all three splitting strategies, and verifies that the
ideal filter bank reconstructs the input exactly. Run headless:

    python demos/01_spectral_expansion.py
"""

import numpy as np

from specprop import spectral

L = 128
t = np.arange(L)
x = (np.sin(2 * np.pi * 5 * t / L)          # slow component
     + 0.6 * np.sin(2 * np.pi * 30 * t / L)  # fast component
     + 0.1 * np.random.default_rng(0).standard_normal(L))

ps = spectral.compute_psd(x)
print(f"series length {L}, {len(ps.psd)} one-sided bins")
print(f"total power (time domain)      {np.sum(x**2):.6f}")
print(f"total power (all FFT bins / L) {np.sum(np.abs(np.fft.fft(x))**2) / L:.6f}")

top3 = np.argsort(ps.psd)[::-1][:3]
print("strongest bins:", [(int(k), round(ps.psd[k], 2)) for k in top3])

print("\nweighted cumulative power H(n) at a few bins:")
for n in (0, 5, 30, ps.top_bin):
    print(f"  H({n:3d}) = {spectral.cumulative_power(ps, n):.4f}")

print("\nband boundaries (cycles/sample) for s = 4:")
for strategy in spectral.STRATEGIES:
    part = spectral.split_frequencies(ps, 4, strategy)
    print(f"  {strategy:12s} {np.round(part.boundaries, 4)}")

expansion = spectral.expand(x, 4, "equal_power")
streams = expansion.streams()
recon = streams[:-1].sum(axis=0)
err = np.max(np.abs(recon - x)) / np.max(np.abs(x))
print(f"\nfilter bank: {streams.shape[0]} streams "
      f"({streams.shape[0] - 1} bands + original)")
print(f"reconstruction error of the band sum: {err:.2e}")

print("\nper-band share of frequency-weighted power (equal_power target: 0.25):")
weights = spectral.band_weighted_powers(ps, expansion.partition)
for j, w in enumerate(weights / weights.sum()):
    lo, hi = expansion.partition.edges(j)
    print(f"  band {j} [{lo:.3f}, {hi:.3f}): {w:.3f}")
