"""Spectrum-wise relation graph with transductive label propagation.

Nodes hold one embedding per (instance, stream). Each layer alternates a
relation step (pairwise squared-difference similarity per stream, combined
across streams and multiplied into the previous edges) with a propagation
step (edge-weighted feature aggregation concatenated with the self
feature). Support pairs with different labels start at edge 0 and stay
there; pairs involving a query carry a 0.5 factor. Predictions are a
softmax over per-class edge mass from each query to the support set.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from . import encoder as enc
from .data import add_band_noise
from .params import ParamStore, add_batchnorm, add_linear

DIAG_EDGE_INIT = 1.0
QUERY_EDGE_FACTOR = 0.5


@dataclass(frozen=True)
class ModelConfig:
    num_bands: int = 8
    strategy: str = "equal_power"
    layers: int = 3
    use_spectral_relations: bool = True
    use_propagation: bool = True
    relation_hidden: int = 64
    combiner_hidden: int = 16
    embed_dim: int = 128
    encoder_channels: tuple = enc.DEFAULT_CHANNELS
    kernel: int = enc.DEFAULT_KERNEL

    @property
    def is_prototype(self):
        # both ablation switches off: plain embedding nearest-prototype model
        return not self.use_spectral_relations and not self.use_propagation

    @property
    def num_streams(self):
        return 1 if self.is_prototype else self.num_bands + 1

    @property
    def num_relations(self):
        return self.num_streams if self.use_spectral_relations else 1

    @property
    def num_graph_layers(self):
        return self.layers if self.use_propagation else 0


@dataclass
class EpisodeTensors:
    """Episode material in array form, instances ordered support-then-query."""

    streams: np.ndarray      # (n, S, L)
    labels: np.ndarray       # (n,) episode-local labels
    query_mask: np.ndarray   # (n,) bool
    way: int


@dataclass
class ForwardResult:
    probs: list              # per-layer (M, way) tensors, index 0 = initial graph
    edges: list              # per-layer (n, n) row-normalized edge tensors
    edges0_unnorm: object    # masked pre-normalization initial edges
    loss: object             # scalar tensor


def init_model(cfg: ModelConfig, seed, dtype=np.float32) -> ParamStore:
    rng = np.random.default_rng(seed)
    store = ParamStore(dtype)
    enc.init_encoder(store, rng, channels=cfg.encoder_channels,
                     kernel=cfg.kernel, embed_dim=cfg.embed_dim)
    if cfg.is_prototype:
        return store
    for layer in range(cfg.num_graph_layers + 1):
        p = f"g{layer}"
        add_linear(store, rng, f"{p}.rel.fc1", cfg.embed_dim, cfg.relation_hidden)
        add_batchnorm(store, f"{p}.rel.bn1", cfg.relation_hidden)
        add_linear(store, rng, f"{p}.rel.fc2", cfg.relation_hidden, 1)
        add_batchnorm(store, f"{p}.rel.bn2", 1)
        add_linear(store, rng, f"{p}.comb.fc1", cfg.num_relations, cfg.combiner_hidden)
        add_linear(store, rng, f"{p}.comb.fc2", cfg.combiner_hidden, 1)
        if layer >= 1:
            add_linear(store, rng, f"{p}.upd.fc1", 2 * cfg.embed_dim, cfg.embed_dim)
            add_batchnorm(store, f"{p}.upd.bn1", cfg.embed_dim)
            add_linear(store, rng, f"{p}.upd.fc2", cfg.embed_dim, cfg.embed_dim)
            add_batchnorm(store, f"{p}.upd.bn2", cfg.embed_dim)
    return store


def prepare_episode(episode, cfg: ModelConfig, noise=None, noise_rng=None) -> EpisodeTensors:
    """Expand (and optionally perturb) an episode into model-ready arrays."""
    instances = list(episode.support) + list(episode.query)
    labels = np.array([y for _, y in instances], dtype=np.int64)
    query_mask = np.zeros(len(instances), dtype=bool)
    query_mask[len(episode.support):] = True
    rows = []
    for ts, _ in instances:
        if noise is not None:
            ts = add_band_noise(ts, noise, noise_rng)
        rows.append(ts.values)
    X = np.stack(rows)
    if cfg.is_prototype:
        streams = X[:, None, :]
    else:
        streams = enc.instance_streams(X, cfg.num_bands, cfg.strategy)
    return EpisodeTensors(streams=streams, labels=labels,
                          query_mask=query_mask, way=episode.way)


def label_mask(labels, query_mask):
    """Initial edge factors: same/different-label supports 1/0, queries 0.5.

    The diagonal is zeroed here because init_edges adds the identity
    separately (self edges start at DIAG_EDGE_INIT before normalization).
    """
    same = labels[:, None] == labels[None, :]
    query_pair = query_mask[:, None] | query_mask[None, :]
    mask = np.where(query_pair, QUERY_EDGE_FACTOR, np.where(same, 1.0, 0.0))
    np.fill_diagonal(mask, 0.0)
    return mask


def _bn(store, name, x, training):
    # the "batch" here is the episode's pair/node set, i.e. part of the
    # model input, so evaluation normalizes with the same episode statistics
    # training sees (running buffers stay untouched outside training)
    return ad.batchnorm(x, store[name + ".gamma"], store[name + ".beta"],
                        store.buffers[name + ".mean"], store.buffers[name + ".var"],
                        training=training, transductive=True)


def _last_stream(V):
    """Select the unfiltered-original stream via a constant projection."""
    n, S, D = V.shape
    sel = np.zeros((S, 1), dtype=V.dtype)
    sel[-1, 0] = 1.0
    flat = ad.reshape(ad.transpose(V, (0, 2, 1)), (n * D, S))
    picked = ad.matmul(flat, ad.Tensor(sel))
    return ad.transpose(ad.reshape(picked, (n, D, 1)), (0, 2, 1))


def relation_matrix(store, layer, V, training):
    """Pairwise per-stream similarities in (0, 1): (n, n, S) tensor."""
    n, S, D = V.shape
    diff2 = ad.square(ad.reshape(V, (n, 1, S, D)) - ad.reshape(V, (1, n, S, D)))
    flat = ad.reshape(diff2, (n * n * S, D))
    p = f"g{layer}.rel"
    h = ad.relu(_bn(store, f"{p}.bn1",
                    ad.matmul(flat, store[f"{p}.fc1.w"]) + store[f"{p}.fc1.b"], training))
    z = _bn(store, f"{p}.bn2",
            ad.matmul(h, store[f"{p}.fc2.w"]) + store[f"{p}.fc2.b"], training)
    return ad.reshape(ad.sigmoid(z), (n, n, S))


def combine_relations(store, layer, rel, training):
    """Squeeze the per-stream relation vector to one scalar per pair."""
    n = rel.shape[0]
    flat = ad.reshape(rel, (n * n, rel.shape[2]))
    p = f"g{layer}.comb"
    h = ad.relu(ad.matmul(flat, store[f"{p}.fc1.w"]) + store[f"{p}.fc1.b"])
    z = ad.matmul(h, store[f"{p}.fc2.w"]) + store[f"{p}.fc2.b"]
    return ad.reshape(ad.sigmoid(z), (n, n))


def _row_normalize(unnorm):
    return unnorm / ad.tsum(unnorm, axis=1, keepdims=True)


def init_edges(store, cfg, V, labels, query_mask, training):
    """Initial edges: label mask times combined relations, unit diagonal."""
    n = V.shape[0]
    V_rel = V if cfg.use_spectral_relations else _last_stream(V)
    rel = relation_matrix(store, 0, V_rel, training)
    combined = combine_relations(store, 0, rel, training)
    mask = ad.Tensor(label_mask(labels, query_mask).astype(V.dtype))
    eye = ad.Tensor((DIAG_EDGE_INIT * np.eye(n)).astype(V.dtype))
    unnorm = combined * mask + eye
    return _row_normalize(unnorm), unnorm


def update_nodes(store, layer, V, E, training):
    """Edge-weighted neighbour aggregation concatenated with self features."""
    n, S, D = V.shape
    flatV = ad.reshape(V, (n, S * D))
    agg = ad.reshape(ad.matmul(E, flatV), (n, S, D))
    x = ad.reshape(ad.concat([agg, V], axis=2), (n * S, 2 * D))
    p = f"g{layer}.upd"
    h = ad.relu(_bn(store, f"{p}.bn1",
                    ad.matmul(x, store[f"{p}.fc1.w"]) + store[f"{p}.fc1.b"], training))
    h = ad.relu(_bn(store, f"{p}.bn2",
                    ad.matmul(h, store[f"{p}.fc2.w"]) + store[f"{p}.fc2.b"], training))
    return ad.reshape(h, (n, S, D))


def update_edges(store, cfg, layer, V, E_prev, training):
    """Fresh relations multiplied into the previous edges, then renormalized."""
    V_rel = V if cfg.use_spectral_relations else _last_stream(V)
    rel = relation_matrix(store, layer, V_rel, training)
    combined = combine_relations(store, layer, rel, training)
    unnorm = E_prev * combined
    return _row_normalize(unnorm), unnorm


def predict_from_edges(E, labels, query_mask, way):
    """Per-query class distribution: softmax of per-class support edge mass."""
    n = len(labels)
    queries = np.flatnonzero(query_mask)
    take_q = np.zeros((len(queries), n), dtype=E.dtype)
    take_q[np.arange(len(queries)), queries] = 1.0
    onehot = np.zeros((n, way), dtype=E.dtype)
    support = ~query_mask
    onehot[support, labels[support]] = 1.0
    scores = ad.matmul(ad.matmul(ad.Tensor(take_q), E), ad.Tensor(onehot))
    return ad.softmax(scores, axis=1)


def layered_loss(probs, query_labels):
    """Cross-entropy averaged over queries, summed over the given layers."""
    total = None
    for p in probs:
        term = ad.cross_entropy_probs(p, query_labels)
        total = term if total is None else total + term
    return total


def episode_forward(store, cfg: ModelConfig, ep: EpisodeTensors, training) -> ForwardResult:
    if cfg.is_prototype:
        return prototype_forward(store, cfg, ep, training)
    V = enc.encode_streams(store, ep.streams, training)
    E, unnorm0 = init_edges(store, cfg, V, ep.labels, ep.query_mask, training)
    edges = [E]
    probs = [predict_from_edges(E, ep.labels, ep.query_mask, ep.way)]
    for layer in range(1, cfg.num_graph_layers + 1):
        V = update_nodes(store, layer, V, E, training)
        E, _ = update_edges(store, cfg, layer, V, E, training)
        edges.append(E)
        probs.append(predict_from_edges(E, ep.labels, ep.query_mask, ep.way))
    qlabels = ep.labels[ep.query_mask]
    supervised = probs[1:] if cfg.num_graph_layers >= 1 else probs[:1]
    loss = layered_loss(supervised, qlabels)
    return ForwardResult(probs=probs, edges=edges, edges0_unnorm=unnorm0, loss=loss)


def prototype_forward(store, cfg, ep: EpisodeTensors, training) -> ForwardResult:
    """Whole-series embedding + softmax over negative prototype distances."""
    n, S, L = ep.streams.shape
    emb = enc.encode_batch(store, ep.streams[:, -1, :], training)
    support = ~ep.query_mask
    sup_idx = np.flatnonzero(support)
    qry_idx = np.flatnonzero(ep.query_mask)
    proto_avg = np.zeros((ep.way, n), dtype=store.dtype)
    for j in sup_idx:
        proto_avg[ep.labels[j], j] = 1.0
    proto_avg /= proto_avg.sum(axis=1, keepdims=True)
    take_q = np.zeros((len(qry_idx), n), dtype=store.dtype)
    take_q[np.arange(len(qry_idx)), qry_idx] = 1.0
    protos = ad.matmul(ad.Tensor(proto_avg), emb)      # (way, D)
    queries = ad.matmul(ad.Tensor(take_q), emb)        # (M, D)
    D = emb.shape[1]
    diff = ad.reshape(queries, (len(qry_idx), 1, D)) - ad.reshape(protos, (1, ep.way, D))
    dist = ad.sqrt(ad.tsum(ad.square(diff), axis=2), eps=1e-12)
    probs = ad.softmax(-dist, axis=1)
    loss = ad.cross_entropy_probs(probs, ep.labels[ep.query_mask])
    return ForwardResult(probs=[probs], edges=[], edges0_unnorm=None, loss=loss)


def variant_config(cfg: ModelConfig, use_spectral_relations, use_propagation) -> ModelConfig:
    return replace(cfg, use_spectral_relations=use_spectral_relations,
                   use_propagation=use_propagation)
