"""Episodic training, evaluation with confidence intervals, and the
experiment harnesses (ablation, cross-domain, cross-way, sweeps, noise
robustness, misclassification band diagnostics).

Seeding: one master seed spawns independent streams for parameter
initialization, training episodes, evaluation episodes, and noise, so
evaluation draws identical episodes no matter what consumed the training
stream, and method comparisons see the same evaluation episodes.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from . import baselines, spectral
from .data import NoiseSpec, sample_episode
from .errors import EvalError, TrainError
from .graphnet import (EpisodeTensors, ModelConfig, episode_forward,
                       init_model, prepare_episode)
from .optim import Adam


@dataclass
class RunConfig:
    way: int = 2
    shot: int = 5
    queries: int = 1
    bands: int = 8
    strategy: str = "equal_power"
    layers: int = 3
    lr: float = 1e-3
    lr_decay: float = 0.5
    lr_decay_every: int = 30
    weight_decay: float = 1e-5
    epochs: int = 60
    episodes_per_epoch: int = 200
    eval_episodes: int = 600
    seed: int = 0
    use_spectral_relations: bool = True
    use_propagation: bool = True
    noise: NoiseSpec = None
    workers: int = 1
    dtype: str = "float32"

    def __post_init__(self):
        for name in ("way", "shot", "queries", "bands", "layers",
                     "lr_decay_every", "episodes_per_epoch", "eval_episodes"):
            if getattr(self, name) < 1:
                raise ValueError(f"RunConfig.{name} must be positive")
        if self.epochs < 0:
            raise ValueError("RunConfig.epochs must be >= 0")
        if not 0.0 < self.lr_decay <= 1.0:
            raise ValueError("RunConfig.lr_decay must be in (0, 1]")

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            num_bands=self.bands, strategy=self.strategy, layers=self.layers,
            use_spectral_relations=self.use_spectral_relations,
            use_propagation=self.use_propagation)

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)


@dataclass
class RunMetrics:
    accuracies: list = field(default_factory=list)
    mean_acc: float = None     # percent
    ci95: float = None         # percent half-width
    loss_curve: list = field(default_factory=list)
    wall_clock_s: float = 0.0
    error_pairs: list = None   # (query_values, matched_support_values) traces

    @classmethod
    def from_accuracies(cls, accs, loss_curve=(), wall_clock_s=0.0, error_pairs=None):
        accs = list(accs)
        mean = 100.0 * float(np.mean(accs)) if accs else None
        ci = ci95_half_width(accs) if accs else None
        return cls(accuracies=accs, mean_acc=mean, ci95=ci,
                   loss_curve=list(loss_curve), wall_clock_s=wall_clock_s,
                   error_pairs=error_pairs)


def ci95_half_width(accuracies):
    """1.96 * sample std / sqrt(n), in accuracy percent."""
    accs = np.asarray(accuracies, dtype=np.float64)
    if len(accs) < 2:
        return 0.0
    return float(100.0 * 1.96 * accs.std(ddof=1) / math.sqrt(len(accs)))


def lr_at_epoch(config: RunConfig, epoch: int) -> float:
    return config.lr * config.lr_decay ** (epoch // config.lr_decay_every)


class _Seeds:
    """Independent child streams derived from the master seed."""

    def __init__(self, seed):
        children = np.random.SeedSequence(seed).spawn(5)
        self.init, self.train, self.eval, self.noise, self.recal = children


class _StreamCache:
    """Per-series spectral expansions, computed once per run."""

    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        self._rows = {}

    def prepare(self, episode) -> EpisodeTensors:
        if self.cfg.is_prototype:
            return prepare_episode(episode, self.cfg)
        instances = list(episode.support) + list(episode.query)
        rows = []
        for ts, _ in instances:
            got = self._rows.get(id(ts))
            if got is None:
                got = spectral.expand(ts.values, self.cfg.num_bands,
                                      self.cfg.strategy).streams()
                self._rows[id(ts)] = got
            rows.append(got)
        labels = np.array([y for _, y in instances], dtype=np.int64)
        query_mask = np.zeros(len(instances), dtype=bool)
        query_mask[len(episode.support):] = True
        return EpisodeTensors(streams=np.stack(rows), labels=labels,
                              query_mask=query_mask, way=episode.way)


def train(train_dataset, config: RunConfig):
    """Episodic Adam training; returns (params, metrics with loss curve)."""
    cfg = config.model_config()
    seeds = _Seeds(config.seed)
    store = init_model(cfg, seeds.init, dtype=config.np_dtype)
    t0 = time.perf_counter()
    if config.epochs == 0:
        return store, RunMetrics(wall_clock_s=time.perf_counter() - t0)
    optimizer = Adam(store, lr=config.lr, weight_decay=config.weight_decay)
    rng = np.random.default_rng(seeds.train)
    cache = _StreamCache(cfg)
    losses = []
    step = 0
    for epoch in range(config.epochs):
        optimizer.lr = lr_at_epoch(config, epoch)
        for _ in range(config.episodes_per_epoch):
            episode = sample_episode(train_dataset, config.way, config.shot,
                                     config.queries, rng)
            ep = cache.prepare(episode)
            out = episode_forward(store, cfg, ep, training=True)
            loss_val = out.loss.item()
            if not math.isfinite(loss_val):
                raise TrainError(f"loss diverged at step {step}")
            losses.append(loss_val)
            optimizer.zero_grad()
            ad.backward(out.loss, leaves=store.params.values())
            optimizer.step()
            step += 1
    _recalibrate_running_stats(store, cfg, train_dataset, config, seeds.recal)
    return store, RunMetrics(loss_curve=losses,
                             wall_clock_s=time.perf_counter() - t0)


def _recalibrate_running_stats(store, cfg, dataset, config, seed, episodes=30):
    """Refresh batchnorm running statistics at the final weights.

    Running averages lag the fast-moving encoder during training, which
    makes per-sample eval-mode normalization drift away from the regime the
    weights were trained in. A short forward-only pass (no gradients, no
    updates) re-centres the buffers.
    """
    rng = np.random.default_rng(seed)
    cache = _StreamCache(cfg)
    with ad.no_grad():
        for _ in range(episodes):
            episode = sample_episode(dataset, config.way, config.shot,
                                     config.queries, rng)
            episode_forward(store, cfg, cache.prepare(episode), training=True)


def _eval_episodes(dataset, config: RunConfig):
    """The evaluation episode sequence is a pure function of the config seed."""
    seeds = _Seeds(config.seed)
    rng = np.random.default_rng(seeds.eval)
    episodes = [sample_episode(dataset, config.way, config.shot, config.queries, rng)
                for _ in range(config.eval_episodes)]
    noise_children = seeds.noise.spawn(len(episodes))
    return episodes, noise_children


def _episode_accuracy(store, cfg, ep: EpisodeTensors, collect_errors):
    with ad.no_grad():
        out = episode_forward(store, cfg, ep, training=False)
    probs = out.probs[-1].data
    predicted = probs.argmax(axis=1)
    qlabels = ep.labels[ep.query_mask]
    acc = float(np.mean(predicted == qlabels))
    errors = []
    if collect_errors:
        qidx = np.flatnonzero(ep.query_mask)
        sup_idx = np.flatnonzero(~ep.query_mask)
        for qi, (pred, true) in enumerate(zip(predicted, qlabels)):
            if pred == true:
                continue
            candidates = sup_idx[ep.labels[sup_idx] == pred]
            if out.edges:
                edge_row = out.edges[-1].data[qidx[qi]]
                best = candidates[np.argmax(edge_row[candidates])]
            else:
                q = ep.streams[qidx[qi], -1]
                dists = [np.linalg.norm(ep.streams[j, -1] - q) for j in candidates]
                best = candidates[int(np.argmin(dists))]
            errors.append((ep.streams[qidx[qi], -1].copy(),
                           ep.streams[best, -1].copy()))
    return acc, errors


def evaluate(test_dataset, store, config: RunConfig, noise=None,
             collect_errors=False) -> RunMetrics:
    """Mean accuracy and 95% CI over freshly sampled evaluation episodes.

    ``noise`` perturbs both supports and queries of each evaluation episode
    (training remains clean). Parameters are never mutated.
    """
    if config.eval_episodes < 1:
        raise EvalError("eval_episodes must be >= 1")
    cfg = config.model_config()
    noise = noise if noise is not None else config.noise
    episodes, noise_children = _eval_episodes(test_dataset, config)
    cache = None if noise is not None else _StreamCache(cfg)
    t0 = time.perf_counter()
    jobs = []
    for episode, child in zip(episodes, noise_children):
        if noise is not None:
            jobs.append(prepare_episode(episode, cfg, noise=noise,
                                        noise_rng=np.random.default_rng(child)))
        else:
            jobs.append(cache.prepare(episode))
    if config.workers > 1:
        results = _parallel_accuracies(store, cfg, jobs, config.workers, collect_errors)
    else:
        results = [_episode_accuracy(store, cfg, ep, collect_errors) for ep in jobs]
    accs = [acc for acc, _ in results]
    errors = [pair for _, pairs in results for pair in pairs] if collect_errors else None
    return RunMetrics.from_accuracies(accs, wall_clock_s=time.perf_counter() - t0,
                                      error_pairs=errors)


def _parallel_accuracies(store, cfg, jobs, workers, collect_errors):
    import multiprocessing as mp
    ctx = mp.get_context("fork")
    with ctx.Pool(workers) as pool:
        return pool.starmap(_episode_accuracy,
                            [(store, cfg, ep, collect_errors) for ep in jobs])


def baseline_evaluate(test_dataset, config: RunConfig, distance="euclid",
                      dtw_config=None, noise=None, collect_errors=False) -> RunMetrics:
    """Episodic 1-NN evaluation on the same episode stream as ``evaluate``."""
    if config.eval_episodes < 1:
        raise EvalError("eval_episodes must be >= 1")
    episodes, noise_children = _eval_episodes(test_dataset, config)
    t0 = time.perf_counter()
    accs = []
    errors = []
    for episode, child in zip(episodes, noise_children):
        if noise is not None:
            rng = np.random.default_rng(child)
            episode = baselines.noisy_episode(episode, noise, rng)
        predicted, matched = baselines.nn_classify(episode, distance=distance,
                                                   config=dtw_config)
        qlabels = episode.query_labels()
        accs.append(float(np.mean(predicted == qlabels)))
        if collect_errors:
            for qi, (pred, true) in enumerate(zip(predicted, qlabels)):
                if pred != true:
                    errors.append((episode.query[qi][0].values.copy(),
                                   episode.support[matched[qi]][0].values.copy()))
    return RunMetrics.from_accuracies(accs, wall_clock_s=time.perf_counter() - t0,
                                      error_pairs=errors if collect_errors else None)


ABLATION_VARIANTS = {
    # flags: (use_spectral_relations, use_propagation)
    "baseline": (False, False),
    "relations": (True, False),
    "propagation": (False, True),
    "full": (True, True),
}


def ablate(train_dataset, test_dataset, config: RunConfig):
    """Train and evaluate the four ablation variants on shared episodes.

    baseline: whole-series embeddings with a softmax-weighted nearest
    prototype classifier. relations: band-wise comparisons, prediction
    straight from the initial graph. propagation: propagation layers driven
    by a whole-series relation only. full: the complete model.
    """
    results = {}
    for name, (use_rel, use_prop) in ABLATION_VARIANTS.items():
        cfg_v = replace(config, use_spectral_relations=use_rel,
                        use_propagation=use_prop)
        store, train_metrics = train(train_dataset, cfg_v)
        metrics = evaluate(test_dataset, store, cfg_v)
        metrics.loss_curve = train_metrics.loss_curve
        results[name] = metrics
    return results


def cross_domain(source_train, target_test, config: RunConfig) -> RunMetrics:
    """Train on one dataset, evaluate on another, no fine-tuning."""
    store, _ = train(source_train, config)
    return evaluate(target_test, store, config)


def cross_way(train_dataset, test_dataset, train_way, eval_way,
              config: RunConfig) -> RunMetrics:
    """Evaluate with a different class count than trained with.

    The architecture is way-agnostic: predictions sum edge mass over
    whatever support set is present, so no parameter changes are needed.
    """
    store, _ = train(train_dataset, replace(config, way=train_way))
    return evaluate(test_dataset, store, replace(config, way=eval_way))


def split_sweep(train_dataset, test_dataset, config: RunConfig, band_counts):
    """Retrain per band count; returns [(bands, RunMetrics), ...]."""
    out = []
    for s in band_counts:
        cfg_s = replace(config, bands=int(s))
        store, _ = train(train_dataset, cfg_s)
        out.append((int(s), evaluate(test_dataset, store, cfg_s)))
    return out


def k_sweep(train_dataset, test_dataset, config: RunConfig, shots):
    """Retrain per support count; returns [(shot, RunMetrics), ...]."""
    out = []
    for k in shots:
        cfg_k = replace(config, shot=int(k))
        store, _ = train(train_dataset, cfg_k)
        out.append((int(k), evaluate(test_dataset, store, cfg_k)))
    return out


def noise_eval(train_dataset, test_dataset, config: RunConfig, noise: NoiseSpec):
    """Clean-vs-noisy comparison for the trained model and the DTW 1-NN
    baseline on identical evaluation episodes."""
    store, _ = train(train_dataset, config)
    model_clean = evaluate(test_dataset, store, config)
    model_noisy = evaluate(test_dataset, store, config, noise=noise)
    dtw_clean = baseline_evaluate(test_dataset, config, distance="dtw")
    dtw_noisy = baseline_evaluate(test_dataset, config, distance="dtw", noise=noise)
    return {
        "model_clean": model_clean,
        "model_noisy": model_noisy,
        "dtw_clean": dtw_clean,
        "dtw_noisy": dtw_noisy,
        "model_drop": model_clean.mean_acc - model_noisy.mean_acc,
        "dtw_drop": dtw_clean.mean_acc - dtw_noisy.mean_acc,
    }


def misclassified_band_stats(error_pairs, num_bands, strategy="equal_power",
                             tau=0.5):
    """Histogram of differing-band counts among wrongly classified pairs.

    Two bands differ when their relative band-energy gap
    |Pa - Pb| / max(Pa, Pb) exceeds ``tau``. Both series are measured on
    the partition derived from the query's spectrum. Buckets follow the
    exactly-one / exactly-two / more-than-two convention.
    """
    counts = {"zero": 0, "one": 0, "two": 0, "more_than_two": 0}
    for query_values, support_values in error_pairs:
        ps_q = spectral.compute_psd(query_values)
        part = spectral.split_frequencies(ps_q, num_bands, strategy)
        e_q = spectral.band_energies(ps_q, part)
        e_s = spectral.band_energies(spectral.compute_psd(support_values), part)
        # bands negligible in both series are float noise, not a difference
        floor = 1e-9 * max(e_q.sum(), e_s.sum(), 1e-300)
        live = (e_q > floor) | (e_s > floor)
        denom = np.maximum(np.maximum(e_q, e_s), 1e-300)
        gaps = np.where(live, np.abs(e_q - e_s) / denom, 0.0)
        differing = int(np.sum(gaps > tau))
        if differing == 0:
            counts["zero"] += 1
        elif differing == 1:
            counts["one"] += 1
        elif differing == 2:
            counts["two"] += 1
        else:
            counts["more_than_two"] += 1
    counts["pairs"] = len(error_pairs)
    return counts


def metrics_record(dataset_name, config: RunConfig, metrics: RunMetrics) -> dict:
    return {
        "dataset": dataset_name,
        "way": config.way,
        "shot": config.shot,
        "s": config.bands,
        "T": config.layers,
        "mean_acc": metrics.mean_acc,
        "ci95": metrics.ci95,
        "seed": config.seed,
        "wall_clock_s": round(metrics.wall_clock_s, 3),
    }
