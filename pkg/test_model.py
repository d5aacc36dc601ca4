#!/usr/bin/env python3
"""
Model tests
Sublayers, aggregation modes, the reduction to plain GCN, equivariance and checkpoints
"""

import numpy as np
import numpy.testing as npt
import pytest
import scipy.sparse as sp

import nn
from conftest import assert_gradients
from errors import ShapeError, TrainingError
from graph import EDGE_TYPES, EdgeType, build_graph, normalize
from model import (
    Aggregation,
    AttentionAggParams,
    GcnLayerParams,
    ModelConfig,
    ModelParams,
    Variant,
    aggregate,
    bite_forward,
    bite_logits,
    build_inputs,
    forward_logits,
    gcn_baseline_forward,
    gcn_sublayer,
    load_checkpoint,
    parse_variants,
    save_checkpoint,
)
from nn import Tensor

DD, WW, DW = EdgeType.DD, EdgeType.WW, EdgeType.DW


def small_graph():
    """4 documents, 3 words, every edge type present"""
    return build_graph(
        [(0, 1), (1, 2)],
        [(0, 1), (1, 2)],
        [(0, 0), (1, 1), (2, 1), (3, 2), (3, 0)],
        n_docs=4,
        n_words=3,
    )


def doc_features(rng, n_docs=4, n_words=3):
    return sp.csr_matrix(rng.random((n_docs, n_words)))


def test_edgeless_sublayer_with_identity_weight_returns_input(rng):
    adj = normalize(build_graph([], [], [], n_docs=3, n_words=0), DD)
    x = Tensor(rng.normal(size=(3, 2)))
    out = gcn_sublayer(x, adj, GcnLayerParams(DD, Tensor(np.eye(2))))
    npt.assert_allclose(out.values, x.values)


def test_path_sublayer_matches_dense_product(rng):
    adj = normalize(build_graph([(0, 1), (1, 2)], [], [], n_docs=3, n_words=0), DD)
    x = Tensor(rng.normal(size=(3, 4)))
    w = Tensor(rng.normal(size=(4, 2)))
    out = gcn_sublayer(x, adj, GcnLayerParams(DD, w))
    npt.assert_allclose(out.values, adj.matrix.toarray() @ x.values @ w.values, atol=1e-12)


def test_sublayer_lifts_typed_adjacency(rng):
    graph = small_graph()
    x = Tensor(rng.normal(size=(7, 2)))
    out = gcn_sublayer(x, normalize(graph, WW), GcnLayerParams(WW, Tensor(np.eye(2))), n_docs=4)
    npt.assert_allclose(out.values[:4], x.values[:4])
    with pytest.raises(ShapeError):
        gcn_sublayer(x, normalize(graph, WW), GcnLayerParams(WW, Tensor(np.eye(2))))


def test_mean_of_identical_messages_is_the_message(rng):
    m = Tensor(rng.normal(size=(5, 3)))
    out = aggregate({DD: m, WW: m, DW: m}, None, Aggregation.MEAN, doc_mask=np.array([1, 1, 0, 0, 0], bool))
    npt.assert_allclose(out.values, m.values)


def test_mean_uses_messages_incident_to_each_node_kind():
    dd, ww, dw = Tensor(np.full((2, 1), 1.0)), Tensor(np.full((2, 1), 3.0)), Tensor(np.full((2, 1), 5.0))
    out = aggregate({DD: dd, WW: ww, DW: dw}, None, "mean", doc_mask=np.array([True, False]))
    npt.assert_allclose(out.values, [[3.0], [4.0]])


def test_concat_projects_back(rng):
    msgs = {t: Tensor(rng.normal(size=(3, 2))) for t in EDGE_TYPES}
    proj = Tensor(rng.normal(size=(6, 2)))
    out = aggregate(msgs, proj, Aggregation.CONCAT)
    expected = np.hstack([msgs[DD].values, msgs[WW].values, msgs[DW].values]) @ proj.values
    npt.assert_allclose(out.values, expected)


def test_equal_scores_give_the_midpoint(rng):
    msgs = {t: Tensor(rng.normal(size=(4, 3))) for t in EDGE_TYPES}
    mask = np.array([True, True, False, False])
    params = AttentionAggParams(heads=1, rho=(Tensor(np.zeros((6, 2))),), projection=Tensor(np.eye(3)))
    trace = []
    out = aggregate(msgs, params, Aggregation.ATTENTION, doc_mask=mask, trace=trace)

    npt.assert_allclose(trace[0], 0.5)
    second_doc = (msgs[DW].values + msgs[WW].values) / 2
    expected_docs = (msgs[DD].values + second_doc) / 2
    expected_words = (msgs[WW].values + msgs[DW].values) / 2
    npt.assert_allclose(out.values[:2], expected_docs[:2])
    npt.assert_allclose(out.values[2:], expected_words[2:])


@pytest.mark.parametrize("activation", ["tanh", "relu", "identity"])
def test_attention_weights_are_distributions(activation, rng):
    msgs = {t: Tensor(rng.normal(size=(6, 4))) for t in EDGE_TYPES}
    params = AttentionAggParams(
        heads=3,
        rho=tuple(Tensor(rng.normal(size=(8, 2))) for _ in range(3)),
        projection=Tensor(rng.normal(size=(12, 4))),
        activation=activation,
    )
    trace = []
    aggregate(msgs, params, Aggregation.ATTENTION, doc_mask=np.arange(6) < 3, trace=trace)
    assert len(trace) == 3
    for weights in trace:
        assert np.all(weights >= 0)
        npt.assert_allclose(weights.sum(axis=1), 1.0, atol=1e-9)


def test_attention_errors(rng):
    msgs = {DD: Tensor(np.zeros((2, 2))), WW: Tensor(np.zeros((2, 2)))}
    params = AttentionAggParams(heads=1, rho=(Tensor(np.zeros((4, 2))),), projection=Tensor(np.eye(2)))
    with pytest.raises(ShapeError):
        aggregate(msgs, params, Aggregation.ATTENTION)
    msgs[DW] = Tensor(np.zeros((2, 2)))
    with pytest.raises(ShapeError):
        aggregate(msgs, AttentionAggParams(heads=0, rho=(), projection=Tensor(np.eye(2))), Aggregation.ATTENTION)
    with pytest.raises(ShapeError):
        aggregate({DD: Tensor(np.zeros((2, 2))), WW: Tensor(np.zeros((3, 2)))}, None, Aggregation.MEAN)


@pytest.mark.parametrize("agg", list(Aggregation))
def test_single_class_output_is_certain(agg, rng):
    graph = small_graph()
    cfg = ModelConfig(out_dim=1, hidden_dim=3, agg=agg, heads=2, dropout=0.0)
    inputs = build_inputs(cfg, graph, doc_features(rng))
    params = ModelParams.init(cfg, inputs.d_in, rng)
    z = bite_forward(inputs.x, inputs.operators, cfg, params)
    npt.assert_allclose(z.values, 1.0)


@pytest.mark.parametrize("seed", range(10))
def test_doc_only_model_reduces_to_plain_gcn(seed):
    rng = np.random.default_rng(seed)
    n_docs, n_words = 6, 4
    dd = [(i, j) for i in range(n_docs) for j in range(i + 1, n_docs) if rng.random() < 0.4]
    graph = build_graph(dd, [], [], n_docs=n_docs, n_words=n_words)
    x_doc = sp.csr_matrix(rng.random((n_docs, n_words)))
    x_joint = sp.vstack([x_doc, sp.identity(n_words)], format="csr")

    cfg = ModelConfig(out_dim=3, hidden_dim=5, messages=(DD,))
    params = ModelParams.init(cfg, n_words, rng)
    joint = bite_forward(x_joint, {DD: normalize(graph, DD)}, cfg, params)
    plain = gcn_baseline_forward(x_doc, normalize(graph, DD), params)
    npt.assert_allclose(joint.values[:n_docs], plain.values, atol=1e-10)


def test_baseline_on_edgeless_graph_with_identity_weights(rng):
    graph = build_graph([], [], [], n_docs=3, n_words=0)
    cfg = ModelConfig(out_dim=2, hidden_dim=2, arch="gcn", messages=(DD,))
    params = ModelParams.from_arrays(cfg, {"layer1.gcn.dd": np.eye(2), "layer2.gcn.dd": np.eye(2)})
    x = np.abs(rng.normal(size=(3, 2)))
    z = gcn_baseline_forward(sp.csr_matrix(x), normalize(graph, DD), params)
    expected = np.exp(x) / np.exp(x).sum(axis=1, keepdims=True)
    npt.assert_allclose(z.values, expected)


@pytest.mark.parametrize("agg", list(Aggregation))
def test_full_model_gradients(agg, rng):
    graph = small_graph()
    cfg = ModelConfig(out_dim=2, hidden_dim=3, agg=agg, heads=2, dropout=0.0)
    inputs = build_inputs(cfg, graph, doc_features(rng))
    params = ModelParams.init(cfg, inputs.d_in, rng)
    labels = np.array([0, 1, 1, 0, 0, 0, 0])
    train_ids = [0, 1, 3]

    def loss():
        logits = bite_logits(inputs.x, inputs.operators, cfg, params)
        return nn.cross_entropy(logits, labels, train_ids)

    assert_gradients(loss, list(params.tensors.values()))


def test_word_permutation_is_equivariant(rng):
    graph = small_graph()
    n_docs, n_words = 4, 3
    perm = np.array([2, 0, 1])
    permuted = build_graph(
        [(0, 1), (1, 2)],
        [(perm[a], perm[b]) for a, b in [(0, 1), (1, 2)]],
        [(d, perm[w]) for d, w in [(0, 0), (1, 1), (2, 1), (3, 2), (3, 0)]],
        n_docs=n_docs,
        n_words=n_words,
    )
    x = rng.random((n_docs, n_words))
    x_perm = np.empty_like(x)
    x_perm[:, perm] = x

    cfg = ModelConfig(out_dim=3, hidden_dim=4, agg=Aggregation.ATTENTION, heads=2, dropout=0.0)
    params = ModelParams.init(cfg, n_words, rng)
    arrays = params.snapshot()
    for t in EDGE_TYPES:
        name = f"layer1.gcn.{t.value}"
        moved = np.empty_like(arrays[name])
        moved[perm] = arrays[name]
        arrays[name] = moved
    params_perm = ModelParams.from_arrays(cfg, arrays)

    z = forward_logits(cfg, params, build_inputs(cfg, graph, sp.csr_matrix(x))).values
    z_perm = forward_logits(cfg, params_perm, build_inputs(cfg, permuted, sp.csr_matrix(x_perm))).values
    npt.assert_allclose(z_perm[:n_docs], z[:n_docs], atol=1e-10)
    npt.assert_allclose(z_perm[n_docs + perm], z[n_docs:], atol=1e-10)


def test_dropout_only_applies_while_training(rng):
    graph = small_graph()
    cfg = ModelConfig(out_dim=2, hidden_dim=3, dropout=0.5)
    inputs = build_inputs(cfg, graph, doc_features(rng))
    params = ModelParams.init(cfg, inputs.d_in, rng)
    first = forward_logits(cfg, params, inputs).values
    npt.assert_array_equal(forward_logits(cfg, params, inputs).values, first)
    noisy = forward_logits(cfg, params, inputs, training=True, rng=np.random.default_rng(0)).values
    assert not np.allclose(noisy, first)


def test_checkpoint_round_trip(tmp_path, rng):
    graph = small_graph()
    cfg = ModelConfig.for_variant("ra", out_dim=2, hidden_dim=3, heads=2)
    inputs = build_inputs(cfg, graph, doc_features(rng))
    params = ModelParams.init(cfg, inputs.d_in, rng)
    path = str(tmp_path / "model-ra-seed0.npz")
    save_checkpoint(path, params, {"seed": 0})

    loaded, meta = load_checkpoint(path)
    assert loaded.cfg == cfg
    assert meta["seed"] == 0
    npt.assert_array_equal(
        forward_logits(cfg, loaded, inputs).values, forward_logits(cfg, params, inputs).values
    )


def test_variant_configs():
    assert ModelConfig.for_variant(Variant.GCN, out_dim=3).arch == "gcn"
    assert ModelConfig.for_variant("a", out_dim=3).agg == Aggregation.ATTENTION
    assert ModelConfig.for_variant("r", out_dim=3).agg == Aggregation.MEAN
    assert Variant.RA.refined and Variant.RA.attention and not Variant.B.refined
    assert parse_variants("B, r,R-A") == [Variant.B, Variant.R, Variant.RA]
    with pytest.raises(TrainingError):
        parse_variants("b,xyz")
    with pytest.raises(TrainingError):
        ModelConfig(out_dim=2, agg=Aggregation.ATTENTION, messages=(DD, WW))
    with pytest.raises(TrainingError):
        ModelConfig(out_dim=2, layers=3)
