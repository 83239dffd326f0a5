import numpy as np
import pytest

from gnewsrec.gnn import GNN, GnnConfig
from gnewsrec.gradcheck import check_gradients
from gnewsrec.hetgraph import TOPIC, USER, build_graph
from gnewsrec.numerics import ParameterStore, Tensor, take_rows

from oracles import dense_propagation

FULL = dict(user_samples=None, news_samples=None)


def make_gnn(n_users, n_topics, dim=4, layers=2, seed=0, std=0.5, self_loops=False):
    store = ParameterStore(seed=seed, std=std)
    cfg = GnnConfig(dim=dim, layers=layers, self_loops=self_loops, **FULL)
    return GNN(store, n_users, n_topics, cfg), store


def feature_fn(table):
    t = table if isinstance(table, Tensor) else Tensor(table)
    return lambda ids: take_rows(t, ids)


def run(gnn, g, feats, layers=None, users=None, news=None):
    users = np.arange(g.n_users) if users is None else users
    news = np.arange(g.n_news) if news is None else news
    u, d = gnn.propagate(g, users, news, feature_fn(feats), np.random.default_rng(0), layers)
    return u.data, d.data


def random_instance(rng, max_nodes=50):
    n_users = int(rng.integers(1, 15))
    n_topics = int(rng.integers(1, 6))
    n_news = int(rng.integers(1, max_nodes - n_users - n_topics + 1))
    n_clicks = int(rng.integers(0, 3 * n_news + 1))
    clicks = list(zip(rng.integers(0, n_users, n_clicks).tolist(), rng.integers(0, n_news, n_clicks).tolist()))
    return clicks, rng.integers(0, n_topics, n_news), n_users, n_news, n_topics


def oracle_for(gnn, clicks, topics, feats, hops):
    layers = [(W.data, b.data) for W, b in zip(gnn.W, gnn.b)]
    return dense_propagation(clicks, topics, feats, gnn.user_emb.data, gnn.topic_emb.data,
                             gnn.W_u.data, gnn.W_z.data, gnn.W_n[USER].data, gnn.W_n[TOPIC].data,
                             layers, hops, gnn.cfg.self_loops)


@pytest.mark.parametrize("hops,self_loops", [(1, False), (2, False), (1, True), (2, True)])
def test_matches_dense_oracle(hops, self_loops):
    rng = np.random.default_rng(100 + hops)
    for trial in range(100):
        clicks, topics, n_users, n_news, n_topics = random_instance(rng)
        g = build_graph(clicks, topics, n_users, n_news, n_topics)
        gnn, _ = make_gnn(n_users, n_topics, dim=5, layers=2, seed=trial, self_loops=self_loops)
        feats = rng.normal(size=(n_news, 5))
        u, d = run(gnn, g, feats, hops)
        u_ref, d_ref = oracle_for(gnn, clicks, topics, feats, hops)
        np.testing.assert_allclose(u, u_ref, rtol=0, atol=1e-10)
        np.testing.assert_allclose(d, d_ref, rtol=0, atol=1e-10)


def test_identity_transforms_sum():
    gnn, _ = make_gnn(1, 1)
    gnn.W_u.data[:] = np.eye(4)
    gnn.W_z.data[:] = np.eye(4)
    u = Tensor(np.array([[1.0, -2.0, 0.5, 3.0]]))
    z = Tensor(np.array([0.5, 0.5, -1.0, 2.0]))
    np.testing.assert_allclose(gnn.aggregate_news_neighborhood(u, z).data, u.data[0] + z.data)


def test_no_users_gives_topic_term():
    gnn, _ = make_gnn(1, 1)
    gnn.W_z.data[:] = np.eye(4)
    z = Tensor(np.array([0.5, 0.5, -1.0, 2.0]))
    np.testing.assert_array_equal(gnn.aggregate_news_neighborhood(None, z).data, z.data)
    empty = Tensor(np.zeros((0, 4)))
    np.testing.assert_array_equal(gnn.aggregate_news_neighborhood(empty, z).data, z.data)


def test_duplicate_samples_collapse():
    gnn, _ = make_gnn(1, 1)
    u = np.array([[0.3, -0.1, 2.0, 1.0]])
    z = Tensor(np.ones(4))
    once = gnn.aggregate_news_neighborhood(Tensor(u), z).data
    ten = gnn.aggregate_news_neighborhood(Tensor(np.repeat(u, 10, axis=0)), z).data
    np.testing.assert_allclose(ten, once, rtol=1e-14)


def test_layer_relu_cases():
    gnn, _ = make_gnn(1, 1)
    gnn.b[0].data[:] = 0.0
    np.testing.assert_array_equal(gnn.gnn_layer(Tensor(np.zeros(4))).data, 0.0)
    gnn.W[0].data[:] = np.eye(4)
    np.testing.assert_array_equal(gnn.gnn_layer(Tensor(np.array([-1.0, 2.0, -3.0, 4.0]))).data, [0, 2, 0, 4])


def test_one_hop_is_aggregate_then_layer():
    g = build_graph([(0, 0), (1, 0), (1, 1)], np.array([1, 0]), 2, 2, 2)
    gnn, _ = make_gnn(2, 2, layers=1)
    feats = np.random.default_rng(0).normal(size=(2, 4))
    _, d = run(gnn, g, feats)
    expected = gnn.gnn_layer(gnn.aggregate_news_neighborhood(gnn.user_emb, gnn.topic_emb[1])).data
    np.testing.assert_allclose(d[0], expected, rtol=1e-13)


def path_graph():
    # u0 - d0 - t0 - d1 - u1
    return build_graph([(0, 0), (1, 1)], np.array([0, 0]), 2, 2, 1)


def live_gnn(layers):
    gnn, _ = make_gnn(2, 1, layers=layers)
    for b in gnn.b:
        b.data[:] = 3.0  # keep every unit in the linear region
    return gnn


def test_path_signal_reaches_two_hops():
    g = path_graph()
    gnn = live_gnn(3)
    feats = np.random.default_rng(1).normal(size=(2, 4))
    _, base = run(gnn, g, feats, layers=2, news=np.array([0]))
    moved = feats.copy()
    moved[1] += 1.0  # d1 is two hops from d0 through the topic
    _, after = run(gnn, g, moved, layers=2, news=np.array([0]))
    assert not np.allclose(base, after)


def test_path_user_signal_with_three_layers():
    g = path_graph()
    gnn = live_gnn(3)
    feats = np.random.default_rng(1).normal(size=(2, 4))
    _, base = run(gnn, g, feats, layers=3, news=np.array([0]))
    gnn.user_emb.data[1] += 1.0
    _, after = run(gnn, g, feats, layers=3, news=np.array([0]))
    assert not np.allclose(base, after)


def test_three_hop_node_does_not_reach_two_layer_embedding():
    g = path_graph()
    gnn = live_gnn(2)
    feats = np.random.default_rng(1).normal(size=(2, 4))
    _, base = run(gnn, g, feats, news=np.array([0]))
    gnn.user_emb.data[1] += 5.0
    _, after = run(gnn, g, feats, news=np.array([0]))
    np.testing.assert_array_equal(base, after)


def test_full_sampling_is_deterministic():
    rng = np.random.default_rng(7)
    clicks, topics, n_users, n_news, n_topics = random_instance(rng)
    g = build_graph(clicks, topics, n_users, n_news, n_topics)
    gnn, _ = make_gnn(n_users, n_topics)
    feats = rng.normal(size=(n_news, 4))
    a = gnn.propagate(g, np.arange(n_users), np.arange(n_news), feature_fn(feats), np.random.default_rng(1))
    b = gnn.propagate(g, np.arange(n_users), np.arange(n_news), feature_fn(feats), np.random.default_rng(2))
    np.testing.assert_array_equal(a[0].data, b[0].data)
    np.testing.assert_array_equal(a[1].data, b[1].data)


def test_user_without_history_uses_own_embedding():
    g = build_graph([(0, 0)], np.array([0]), 2, 1, 1)
    gnn, _ = make_gnn(2, 1, layers=1)
    u, _ = run(gnn, g, np.ones((1, 4)))
    expected = gnn.gnn_layer(gnn.user_emb[1]).data
    np.testing.assert_allclose(u[1], expected, rtol=1e-14)


def test_self_loops_let_a_news_see_its_own_features():
    g = path_graph()
    feats = np.random.default_rng(2).normal(size=(2, 4))
    moved = feats.copy()
    moved[0] += 1.0
    plain, looped = live_gnn(1), live_gnn(1)
    looped.cfg.self_loops = True
    assert np.array_equal(run(plain, g, feats, news=np.array([0]))[1], run(plain, g, moved, news=np.array([0]))[1])
    assert not np.allclose(run(looped, g, feats, news=np.array([0]))[1], run(looped, g, moved, news=np.array([0]))[1])


def test_sampled_outputs_finite():
    rng = np.random.default_rng(3)
    clicks, topics, n_users, n_news, n_topics = random_instance(rng)
    g = build_graph(clicks, topics, n_users, n_news, n_topics)
    store = ParameterStore(seed=0)
    gnn = GNN(store, n_users, n_topics, GnnConfig(dim=8, layers=2, user_samples=3, news_samples=4))
    u, d = gnn.propagate(g, np.arange(n_users), np.arange(n_news),
                         feature_fn(rng.normal(size=(n_news, 8))), rng)
    assert np.all(np.isfinite(u.data)) and np.all(np.isfinite(d.data))


def test_layers_out_of_range():
    with pytest.raises(ValueError):
        make_gnn(1, 1, layers=4)
    gnn, _ = make_gnn(1, 1, layers=1)
    g = build_graph([(0, 0)], np.array([0]), 1, 1, 1)
    with pytest.raises(ValueError):
        run(gnn, g, np.ones((1, 4)), layers=2)


def test_gradients_reach_every_parameter():
    g = build_graph([(0, 0), (0, 1), (1, 1), (1, 2), (2, 3), (0, 3)], np.array([0, 1, 0, 1]), 3, 4, 2)
    gnn, store = make_gnn(3, 2, dim=4, layers=2, seed=2)
    feats = Tensor(np.random.default_rng(2).normal(size=(4, 4)), requires_grad=True)
    params = dict(store.params)
    params["news_features"] = feats

    def loss():
        u, d = gnn.propagate(g, np.arange(3), np.arange(4), feature_fn(feats), np.random.default_rng(0))
        return (u * u).sum() + (d * d).sum()

    loss().backward()
    for name, p in params.items():
        assert np.any(p.grad), name
    errs = check_gradients(loss, params)
    assert max(errs.values()) < 1e-4, errs
