"""Graph model tests: relations, edges, propagation, prediction, loss."""

import numpy as np
import pytest

from specprop import autodiff as ad
from specprop import graphnet as gn
from specprop import synthetic
from specprop.data import sample_episode
from specprop.engine import RunConfig, train


def toy_config(**kw):
    defaults = dict(num_bands=2, layers=2, relation_hidden=8,
                    combiner_hidden=4, embed_dim=16,
                    encoder_channels=(4, 8), kernel=3)
    defaults.update(kw)
    return gn.ModelConfig(**defaults)


def toy_V(n=4, streams=3, dim=16, seed=0, dtype=np.float32):
    rng = np.random.default_rng(seed)
    return ad.Tensor(rng.standard_normal((n, streams, dim)).astype(dtype))


def test_relation_is_half_at_equal_features():
    cfg = toy_config()
    store = gn.init_model(cfg, seed=0)
    # identical features everywhere: every pairwise difference vector is
    # zero, and with fresh zero biases/shifts the relation is sigmoid(0)
    V = ad.Tensor(np.ones((4, 3, 16), dtype=np.float32) * 0.7)
    r = gn.relation_matrix(store, 0, V, training=False).data
    assert np.allclose(r, 0.5, atol=1e-7)


def test_relation_symmetry_and_range():
    cfg = toy_config()
    store = gn.init_model(cfg, seed=1)
    V = toy_V(n=6, seed=2)
    r = gn.relation_matrix(store, 0, V, training=False).data
    assert np.allclose(r, r.transpose(1, 0, 2), atol=1e-7)
    assert np.all((r > 0) & (r < 1))


def test_label_mask_values():
    labels = np.array([0, 0, 1, 0, 1])
    qmask = np.array([False, False, False, True, True])
    m = gn.label_mask(labels, qmask)
    assert m[0, 1] == 1.0      # same-label supports
    assert m[0, 2] == 0.0      # different-label supports
    assert m[0, 3] == 0.5 and m[3, 4] == 0.5  # query pairs
    assert np.all(np.diag(m) == 0.0)


def test_init_edges_mask_and_normalization():
    cfg = toy_config()
    store = gn.init_model(cfg, seed=3)
    n, way = 4, 2
    V = toy_V(n=n)
    labels = np.array([0, 1, 0, 1])
    qmask = np.array([False, False, True, True])
    E, unnorm = gn.init_edges(store, cfg, V, labels, qmask, training=False)
    u = unnorm.data
    assert u[0, 1] == 0.0                    # differing-label support pair
    q_entries = u[2, :2]                     # query-support entries
    assert np.all((q_entries > 0) & (q_entries < 0.5))
    assert np.allclose(np.diag(u), 1.0)
    assert np.allclose(E.data.sum(axis=1), 1.0, atol=1e-6)


def test_init_edges_uniform_for_identical_features():
    cfg = toy_config()
    store = gn.init_model(cfg, seed=4)
    n = 4
    V = ad.Tensor(np.ones((n, 3, 16), dtype=np.float32))
    labels = np.array([0, 1, 0, 1])
    qmask = np.array([False, False, True, True])
    _, unnorm = gn.init_edges(store, cfg, V, labels, qmask, training=False)
    u = unnorm.data
    # identical features make every combined relation equal, so all
    # non-masked off-diagonal entries share one value per mask factor
    offdiag = u[2, [0, 1, 3]]
    assert np.allclose(offdiag, offdiag[0], atol=1e-7)


def test_update_nodes_identity_edges():
    cfg = toy_config()
    store = gn.init_model(cfg, seed=5)
    V = toy_V(n=3)
    eye = ad.Tensor(np.eye(3, dtype=np.float32))
    out = gn.update_nodes(store, 1, V, eye, training=False)
    # identity propagation means the aggregate equals the self feature:
    # the update sees concat(v, v) for every node
    x = ad.concat([V, V], axis=2)
    flat = ad.reshape(x, (9, 32))
    h = ad.relu(gn._bn(store, "g1.upd.bn1",
                       ad.matmul(flat, store["g1.upd.fc1.w"]) + store["g1.upd.fc1.b"], False))
    h = ad.relu(gn._bn(store, "g1.upd.bn2",
                       ad.matmul(h, store["g1.upd.fc2.w"]) + store["g1.upd.fc2.b"], False))
    expected = h.data.reshape(3, 3, 16)
    assert np.allclose(out.data, expected, atol=1e-6)


def test_update_nodes_symmetric_inputs():
    cfg = toy_config()
    store = gn.init_model(cfg, seed=6)
    base = np.random.default_rng(7).standard_normal((1, 3, 16)).astype(np.float32)
    V = ad.Tensor(np.repeat(base, 2, axis=0))
    E = ad.Tensor(np.full((2, 2), 0.5, dtype=np.float32))
    out = gn.update_nodes(store, 1, V, E, training=False).data
    assert np.allclose(out[0], out[1], atol=1e-7)


def test_update_edges_zero_persistence_and_rows():
    cfg = toy_config()
    store = gn.init_model(cfg, seed=8)
    V = toy_V(n=4, seed=9)
    E_prev = ad.Tensor(np.array([
        [0.5, 0.0, 0.25, 0.25],
        [0.0, 0.5, 0.25, 0.25],
        [0.25, 0.25, 0.5, 0.0],
        [0.25, 0.25, 0.0, 0.5],
    ], dtype=np.float32))
    E, _ = gn.update_edges(store, cfg, 1, V, E_prev, training=False)
    assert E.data[0, 1] == 0.0 and E.data[2, 3] == 0.0
    assert np.allclose(E.data.sum(axis=1), 1.0, atol=1e-6)


def test_update_edges_identity_combiner_renormalizes():
    cfg = toy_config()
    store = gn.init_model(cfg, seed=10)
    # force the combiner to output exactly 1: zero weights, huge bias
    store["g1.comb.fc2.w"].data[:] = 0.0
    store["g1.comb.fc2.b"].data[:] = 50.0  # sigmoid(50) rounds to 1.0
    V = toy_V(n=3, seed=11)
    E_prev = ad.Tensor(np.array([
        [0.6, 0.2, 0.2],
        [0.1, 0.8, 0.1],
        [0.3, 0.3, 0.4],
    ], dtype=np.float32))
    E, _ = gn.update_edges(store, cfg, 1, V, E_prev, training=False)
    assert np.allclose(E.data, E_prev.data, atol=1e-6)


def test_predict_hand_softmax():
    E = ad.Tensor(np.array([
        [0.0, 0.0, 0.0],
        [0.0, 0.0, 0.0],
        [0.9, 0.1, 0.0],
    ], dtype=np.float64))
    labels = np.array([0, 1, 0])
    qmask = np.array([False, False, True])
    probs = gn.predict_from_edges(E, labels, qmask, way=2).data
    expected = np.exp([0.9, 0.1]) / np.exp([0.9, 0.1]).sum()
    assert np.allclose(probs[0], expected, atol=1e-12)
    assert probs[0][0] == pytest.approx(0.6900, abs=5e-5)


def test_predict_uniform_and_monotone():
    labels = np.array([0, 1, 0])
    qmask = np.array([False, False, True])
    E_eq = ad.Tensor(np.array([[0, 0, 0], [0, 0, 0], [0.4, 0.4, 0.2]]))
    probs = gn.predict_from_edges(E_eq, labels, qmask, 2).data
    assert np.allclose(probs[0], [0.5, 0.5])
    E_up = ad.Tensor(np.array([[0, 0, 0], [0, 0, 0], [0.5, 0.3, 0.2]]))
    probs_up = gn.predict_from_edges(E_up, labels, qmask, 2).data
    assert probs_up[0, 0] > probs[0, 0]


def test_softmax_shift_invariance():
    rng = np.random.default_rng(12)
    scores = rng.standard_normal((5, 3))
    a = ad.softmax(ad.Tensor(scores), axis=1).data
    b = ad.softmax(ad.Tensor(scores + 7.3), axis=1).data
    assert np.allclose(a, b, atol=1e-6)


def test_loss_perfect_and_uniform():
    perfect = ad.Tensor(np.array([[1.0, 0.0], [1.0, 0.0]]))
    labels = np.array([0, 0])
    loss = gn.layered_loss([perfect, perfect, perfect], labels)
    assert loss.item() == pytest.approx(0.0, abs=1e-12)
    uniform = ad.Tensor(np.full((4, 2), 0.5))
    loss3 = gn.layered_loss([uniform] * 3, np.array([0, 1, 0, 1]))
    assert loss3.item() == pytest.approx(3 * np.log(2), rel=1e-9)


def episode_tensors(seed=0, way=2, shot=1, q=1, bands=2, length=16):
    ds = synthetic.make_separable_dataset(n_classes=way, per_class=shot + q + 2,
                                          length=length, seed=seed)
    ep = sample_episode(ds, way, shot, q, np.random.default_rng(seed))
    cfg = toy_config(num_bands=bands)
    return cfg, gn.prepare_episode(ep, cfg)


def test_forward_pipeline_contract():
    cfg, ep = episode_tensors()
    store = gn.init_model(cfg, seed=13)
    out = gn.episode_forward(store, cfg, ep, training=False)
    assert len(out.edges) == cfg.num_graph_layers + 1
    assert len(out.probs) == cfg.num_graph_layers + 1
    for E in out.edges:
        assert np.allclose(E.data.sum(axis=1), 1.0, atol=1e-6)
    for P in out.probs:
        assert np.allclose(P.data.sum(axis=1), 1.0, atol=1e-6)
    assert np.isfinite(out.loss.item())


def test_forward_deterministic():
    cfg, ep = episode_tensors(seed=1)
    store = gn.init_model(cfg, seed=14)
    a = gn.episode_forward(store, cfg, ep, training=False)
    b = gn.episode_forward(store, cfg, ep, training=False)
    assert np.array_equal(a.loss.data, b.loss.data)
    assert np.array_equal(a.probs[-1].data, b.probs[-1].data)


def test_permutation_equivariance():
    cfg, ep = episode_tensors(seed=2)
    store = gn.init_model(cfg, seed=15, dtype=np.float64)
    out = gn.episode_forward(store, cfg, ep, training=False)
    perm = np.array([2, 0, 3, 1])
    ep_p = gn.EpisodeTensors(streams=ep.streams[perm], labels=ep.labels[perm],
                             query_mask=ep.query_mask[perm], way=ep.way)
    out_p = gn.episode_forward(store, cfg, ep_p, training=False)
    E = out.edges[-1].data
    E_p = out_p.edges[-1].data
    assert np.allclose(E_p, E[np.ix_(perm, perm)], atol=1e-6)
    # queries keep their identity: map query order through the permutation
    qorig = np.flatnonzero(ep.query_mask)
    qperm = np.flatnonzero(ep.query_mask[perm])
    for qi, inst in enumerate(qperm):
        orig_pos = np.where(qorig == perm[inst])[0][0]
        assert np.allclose(out_p.probs[-1].data[qi],
                           out.probs[-1].data[orig_pos], atol=1e-6)


def test_unnormalized_edges_in_unit_interval():
    for seed in range(3):
        cfg, ep = episode_tensors(seed=seed)
        store = gn.init_model(cfg, seed=seed + 20)
        out = gn.episode_forward(store, cfg, ep, training=False)
        u = out.edges0_unnorm.data
        assert np.all((u >= 0.0) & (u <= 1.0))


def test_end_to_end_gradient_small_model():
    cfg, ep = episode_tensors(seed=3, bands=2)
    store = gn.init_model(cfg, seed=16, dtype=np.float64)

    def fn(_):
        return gn.episode_forward(store, cfg, ep, training=True).loss

    # h below the per-op default: the composite model has relu kinks within
    # 1e-4 of some pre-activations, which central differences must not straddle
    inputs = list(store.params.values())
    err = ad.grad_check(fn, inputs, h=1e-5, max_coords=3,
                        rng=np.random.default_rng(17))
    assert err < 1e-3, f"end-to-end grad error {err:.2e}"


def test_loss_decreases_on_separable_toy_task():
    ds = synthetic.make_separable_dataset(n_classes=2, per_class=10, length=16, seed=5)
    config = RunConfig(way=2, shot=1, queries=1, bands=2, layers=1,
                       epochs=1, episodes_per_epoch=50, eval_episodes=1, seed=1)
    _, metrics = train(ds, config)
    losses = metrics.loss_curve
    assert len(losses) == 50
    assert np.mean(losses[-10:]) < np.mean(losses[:10])


def test_prototype_variant_runs():
    cfg = toy_config(use_spectral_relations=False, use_propagation=False)
    assert cfg.is_prototype
    ds = synthetic.make_separable_dataset(per_class=6, length=16, seed=6)
    ep = sample_episode(ds, 2, 2, 1, np.random.default_rng(2))
    tensors = gn.prepare_episode(ep, cfg)
    assert tensors.streams.shape[1] == 1  # no expansion for the prototype path
    store = gn.init_model(cfg, seed=17)
    out = gn.episode_forward(store, cfg, tensors, training=True)
    assert out.probs[-1].data.shape == (2, 2)
    assert np.isfinite(out.loss.item())


def test_relations_only_variant_predicts_from_initial_graph():
    cfg = toy_config(use_propagation=False)
    ds = synthetic.make_separable_dataset(per_class=6, length=16, seed=7)
    ep = sample_episode(ds, 2, 2, 1, np.random.default_rng(3))
    tensors = gn.prepare_episode(ep, cfg)
    store = gn.init_model(cfg, seed=18)
    out = gn.episode_forward(store, cfg, tensors, training=True)
    assert len(out.edges) == 1 and len(out.probs) == 1
    assert np.isfinite(out.loss.item())


def test_propagation_only_variant_uses_single_relation():
    cfg = toy_config(use_spectral_relations=False)
    assert cfg.num_relations == 1
    store = gn.init_model(cfg, seed=19)
    assert store["g0.comb.fc1.w"].shape == (1, cfg.combiner_hidden)
    ds = synthetic.make_separable_dataset(per_class=6, length=16, seed=8)
    ep = sample_episode(ds, 2, 2, 1, np.random.default_rng(4))
    out = gn.episode_forward(store, cfg, gn.prepare_episode(ep, cfg), training=True)
    assert len(out.probs) == cfg.layers + 1
    assert np.isfinite(out.loss.item())
