"""Classical episodic comparators: 1-NN with Euclidean or DTW distance."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Episode, add_band_noise
from .errors import ContractError


@dataclass
class DtwConfig:
    """``window`` is an optional Sakoe-Chiba band half-width in samples."""

    window: int = None

    def __post_init__(self):
        if self.window is not None and self.window < 0:
            raise ContractError("DtwConfig.window must be >= 0")


def dtw_distance(a, b, config: DtwConfig = None) -> float:
    """Dynamic time warping alignment cost with |a_i - b_j| cell cost.

    Steps down/right/diagonal, optional band constraint. Computed over
    anti-diagonals so the inner loop is vectorized.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise ContractError("dtw_distance: inputs must be non-empty")
    window = config.window if config is not None else None
    n, m = len(a), len(b)
    cost = np.abs(a[:, None] - b[None, :])
    if window is not None:
        i_idx = np.arange(n)[:, None]
        j_idx = np.arange(m)[None, :]
        cost = np.where(np.abs(i_idx - j_idx) <= window, cost, np.inf)

    # padded DP table D[(n+1) x (m+1)] walked by anti-diagonals; diag d holds
    # entries (i, d-i) for i in [max(0, d-m), min(d, n)]
    prev2 = None
    prev1 = np.array([0.0])
    for d in range(1, n + m + 1):
        lo = max(0, d - m)
        hi = min(d, n)
        i = np.arange(lo, hi + 1)
        j = d - i
        lo1 = max(0, d - 1 - m)
        up = np.full(len(i), np.inf)     # D[i-1, j]
        left = np.full(len(i), np.inf)   # D[i, j-1]
        diag = np.full(len(i), np.inf)   # D[i-1, j-1]
        valid_up = i >= 1
        if valid_up.any():
            up[valid_up] = prev1[i[valid_up] - 1 - lo1]
        valid_left = j >= 1
        if valid_left.any():
            left[valid_left] = prev1[i[valid_left] - lo1]
        if prev2 is not None:
            lo2 = max(0, d - 2 - m)
            valid_diag = (i >= 1) & (j >= 1)
            if valid_diag.any():
                diag[valid_diag] = prev2[i[valid_diag] - 1 - lo2]
        current = np.full(len(i), np.inf)
        interior = (i >= 1) & (j >= 1)
        if interior.any():
            best = np.minimum(np.minimum(up, left), diag)
            current[interior] = (cost[i[interior] - 1, j[interior] - 1]
                                 + best[interior])
        prev2, prev1 = prev1, current
    return float(prev1[-1])


def euclidean_distance(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ContractError(f"euclidean_distance: shapes {a.shape} vs {b.shape}")
    return float(np.linalg.norm(a - b))


def nn_classify(episode: Episode, distance="euclid", config: DtwConfig = None):
    """1-NN labels for every query; ties go to the lowest support index.

    Returns (predicted_labels, matched_support_indices).
    """
    if distance not in ("euclid", "dtw"):
        raise ContractError(f"unknown distance {distance!r}")
    support = episode.support_matrix()
    queries = episode.query_matrix()
    sup_labels = episode.support_labels()
    predicted = np.empty(len(queries), dtype=np.int64)
    matched = np.empty(len(queries), dtype=np.int64)
    for qi, q in enumerate(queries):
        if distance == "euclid":
            dists = np.linalg.norm(support - q[None, :], axis=1)
        else:
            dists = np.array([dtw_distance(q, s, config) for s in support])
        best = int(np.argmin(dists))  # argmin takes the first minimum
        matched[qi] = best
        predicted[qi] = sup_labels[best]
    return predicted, matched


def noisy_episode(episode: Episode, spec, rng) -> Episode:
    """Perturb every support and query series; consumes the rng in the same
    support-then-query order the model evaluation path uses."""
    support = [(add_band_noise(ts, spec, rng), y) for ts, y in episode.support]
    query = [(add_band_noise(ts, spec, rng), y) for ts, y in episode.query]
    return Episode(support=support, query=query, way=episode.way, shot=episode.shot)
