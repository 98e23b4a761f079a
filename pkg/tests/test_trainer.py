import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from locsampler.graph import generate_clustered
from locsampler.samplers import LAYER_WISE, NODE_WISE, SUBGRAPH, SamplerConfig
from locsampler.trainer import (
    ModelParams,
    accuracy,
    cluster_task,
    gcn_forward,
    init_params,
    loss_and_grad,
    normalize_adj,
    read_features,
    read_splits,
    row_normalize,
    softmax_cross_entropy,
    train,
    write_features,
    write_splits,
)

from conftest import dense, make, random_graph, small_graphs


def P(w0, w1):
    return ModelParams(np.atleast_2d(np.asarray(w0, float)), np.atleast_2d(np.asarray(w1, float)))


def finite_difference_check(adj, X, params, labels, mask, eps=1e-6):
    _, grads = loss_and_grad(adj, X, params, labels, mask)
    worst = 0.0
    for name, g in zip(("w0", "w1"), grads):
        w = getattr(params, name)
        for idx in np.ndindex(w.shape):
            old = w[idx]
            w[idx] = old + eps
            up = loss_and_grad(adj, X, params, labels, mask)[0]
            w[idx] = old - eps
            down = loss_and_grad(adj, X, params, labels, mask)[0]
            w[idx] = old
            num = (up - down) / (2 * eps)
            worst = max(worst, abs(num - g[idx]) / max(abs(num), abs(g[idx]), 1e-6))
    return worst


# ---------------------------------------------------------- normalization

def test_normalize_examples(triangle):
    assert normalize_adj(make([], 1)).toarray().tolist() == [[1.0]]
    assert np.allclose(normalize_adj(make([(0, 1)], 2)).toarray(), 0.5)
    assert np.allclose(normalize_adj(triangle).toarray(), 1 / 3)


@settings(max_examples=60, deadline=None)
@given(small_graphs(max_nodes=32))
def test_normalize_dense_oracle(g):
    a = dense(g).astype(float) + np.eye(g.num_nodes)
    d = a.sum(axis=1)
    want = a / np.sqrt(np.outer(d, d))
    got = normalize_adj(g).toarray()
    assert np.max(np.abs(got - want)) < 1e-12
    assert np.max(np.abs(got - got.T)) < 1e-12


def test_row_normalize_empty_rows():
    m = row_normalize(np.array([[1, 1, 0], [0, 0, 0]]))
    assert m.toarray().tolist() == [[0.5, 0.5, 0.0], [0.0, 0.0, 0.0]]


# ---------------------------------------------------------------- forward

def test_forward_examples():
    iso = normalize_adj(make([], 1))
    assert gcn_forward(iso, [[1.0]], P(1, 1)).tolist() == [[1.0]]
    assert gcn_forward(iso, [[-1.0]], P(1, 5)).tolist() == [[0.0]]
    edge = normalize_adj(make([(0, 1)], 2))
    assert np.allclose(gcn_forward(edge, [[1.0], [0.0]], P(1, 1)), [[0.5], [0.5]])


def test_forward_dimension_mismatch(triangle):
    with pytest.raises(ValueError):
        gcn_forward(normalize_adj(triangle), np.ones((2, 1)), P(1, 1))
    with pytest.raises(ValueError):
        gcn_forward(normalize_adj(triangle), np.ones((3, 2)), P(1, 1))


def test_forward_block_pair_matches_square(chorded4):
    a = normalize_adj(chorded4)
    X = np.random.default_rng(0).normal(size=(4, 3))
    p = init_params(3, 5, 2, seed=1)
    assert np.allclose(gcn_forward((a, a), X, p), gcn_forward(a, X, p))


# ------------------------------------------------------------------- loss

def test_loss_uniform_logits():
    loss, _ = softmax_cross_entropy(np.zeros((4, 3)), np.array([0, 1, 2, 0]), np.ones(4, bool))
    assert abs(loss - np.log(3)) < 1e-12


def test_loss_margin_below_uniform():
    logits = np.eye(3) * 5
    loss, _ = softmax_cross_entropy(logits, np.arange(3), np.ones(3, bool))
    assert loss < np.log(3)


def test_loss_empty_mask():
    with pytest.raises(ValueError):
        softmax_cross_entropy(np.zeros((2, 2)), np.zeros(2, int), np.zeros(2, bool))


def test_gradient_six_nodes():
    g = random_graph(6, 0.5, seed=3)
    rng = np.random.default_rng(4)
    X = rng.normal(size=(6, 4))
    p = init_params(4, 5, 3, seed=5)
    mask = np.array([1, 1, 0, 1, 0, 1], bool)
    assert finite_difference_check(normalize_adj(g), X, p, rng.integers(0, 3, 6), mask) < 1e-4


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**32))
def test_gradient_block_pair(seed):
    rng = np.random.default_rng(seed)
    outer = row_normalize(rng.random((3, 5)) < 0.6)
    inner = row_normalize(rng.random((5, 7)) < 0.6)
    X = rng.normal(size=(7, 3))
    p = init_params(3, 4, 2, seed=seed)
    labels = rng.integers(0, 2, 3)
    assert finite_difference_check((outer, inner), X, p, labels, np.ones(3, bool)) < 1e-4


def test_accuracy():
    assert accuracy(np.eye(3), [0, 1, 1], [0, 1, 2]) == pytest.approx(2 / 3)
    assert accuracy(np.eye(3), [0, 1, 2], []) == 0.0


# -------------------------------------------------------------- training

@pytest.fixture(scope="module")
def task():
    g = generate_clustered(4, 50, 0.3, 0.01, seed=0)
    features, splits = cluster_task(g.labels, 0.1, seed=1)
    return g, features, g.labels, splits


def test_epochs_rejected(task):
    g, X, y, splits = task
    with pytest.raises(ValueError):
        train(g, X, y, splits, None, epochs=0, lr=0.5)


def test_overlapping_splits_rejected(task):
    g, X, y, splits = task
    with pytest.raises(ValueError):
        train(g, X, y, (splits[0], splits[0], splits[2]), None, epochs=1, lr=0.5)


def test_full_graph_reaches_baseline(task):
    g, X, y, splits = task
    rep = train(g, X, y, splits, None, epochs=200, lr=0.5, seed=3)
    assert rep.best_val_accuracy >= 0.95
    assert rep.losses()[-1] < rep.losses()[0]


@pytest.mark.parametrize("cfg", [
    SamplerConfig(SUBGRAPH, batch_size=40, subgraph_budget=40, seed=2),
    SamplerConfig(NODE_WISE, batch_size=40, fanouts=(5, 5), seed=2),
    SamplerConfig(LAYER_WISE, batch_size=40, layer_sizes=(40, 40), seed=2),
])
def test_sampled_training_deterministic(task, cfg):
    g, X, y, splits = task
    a = train(g, X, y, splits, cfg, epochs=5, lr=0.5, seed=3)
    b = train(g, X, y, splits, cfg, epochs=5, lr=0.5, seed=3)
    assert a.losses() == b.losses()
    assert a.to_json() == b.to_json() and a.to_csv() == b.to_csv()
    for e in a.epochs:
        assert e.sampling_seconds + e.compute_seconds <= e.total_seconds
    assert a.losses()[-1] < a.losses()[0]


def test_layered_needs_two_hops(task):
    g, X, y, splits = task
    with pytest.raises(ValueError, match="two"):
        train(g, X, y, splits, SamplerConfig(NODE_WISE, batch_size=40, fanouts=(5,)), epochs=1, lr=0.5)


def test_report_serialization(task):
    g, X, y, splits = task
    rep = train(g, X, y, splits, None, epochs=2, lr=0.5)
    assert rep.to_csv().splitlines()[0] == "epoch,loss,val_accuracy"
    assert "sampling_seconds" in rep.to_csv(with_timing=True)
    assert "timing" not in rep.to_json() and "timing" in rep.to_json(with_timing=True)


# ------------------------------------------------------------------ files

def test_feature_and_split_files(tmp_path, task):
    g, X, y, splits = task
    write_features(tmp_path / "f.txt", X, y)
    X2, y2 = read_features(tmp_path / "f.txt")
    assert np.array_equal(X, X2) and np.array_equal(y, y2)
    write_splits(tmp_path / "s.txt", splits)
    assert all(np.array_equal(a, b) for a, b in zip(splits, read_splits(tmp_path / "s.txt")))


def test_feature_file_errors(tmp_path):
    (tmp_path / "f.txt").write_text("2 1 2\n0.5 0\n")
    with pytest.raises(ValueError):
        read_features(tmp_path / "f.txt")
    (tmp_path / "g.txt").write_text("1 1 2\n0.5 7\n")
    with pytest.raises(ValueError, match="label"):
        read_features(tmp_path / "g.txt")


def test_cluster_task_shapes():
    X, (tr, va, te) = cluster_task(np.repeat(np.arange(4), 5), 0.0, seed=0)
    assert X.shape == (20, 4) and np.array_equal(X.argmax(axis=1), np.repeat(np.arange(4), 5))
    assert (len(tr), len(va), len(te)) == (12, 4, 4)
    assert sorted(np.concatenate([tr, va, te]).tolist()) == list(range(20))
