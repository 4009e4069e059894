import math

import numpy as np
import pytest

from graph_decipher import autodiff as ad
from graph_decipher.autodiff import Tensor
from graph_decipher.errors import ContractError, ShapeError
from graph_decipher.graph import Dataset, Graph, LabelSet, SbmSpec, Split, generate_sbm, make_split
from graph_decipher.model import (GraphContext, ModelConfig, combine_head, init_params, loss,
                                  model_forward, multi_head, nab_forward)
from graph_decipher.optim import grad_check

from helpers import distinct_similarities, relabel


def elu(x):
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0)))


def leaky(x, slope=0.2):
    return np.where(x > 0, x, slope * x)


def ctx_for(n, edges, F=3, seed=0):
    g = Graph.from_edges(n, edges, undirected=True)
    X = np.random.default_rng(seed).random((n, F))
    ds = Dataset(g, X, LabelSet(np.arange(n) % 2, 2))
    return GraphContext.build(ds, Split(np.array([0]), np.array([], int), np.array([], int)))


def dense_nab(X, A, W, a, slope=0.2):
    """Reference: dense score matrix with -inf off the neighborhood."""
    Z = X @ W
    d = Z.shape[1]
    n = X.shape[0]
    out = np.zeros_like(Z)
    B = np.zeros((n, n))
    for v in range(n):
        nb = np.flatnonzero(A[v])
        e = np.array([leaky(a[:d] @ Z[v] + a[d:] @ Z[s], slope) for s in nb])
        w = np.exp(e - e.max())
        w /= w.sum()
        B[v, nb] = w
        out[v] = elu(w @ Z[nb])
    return out, B


# ---------------------------------------------------------------- node attention

def test_nab_self_loop_only():
    ctx = ctx_for(1, [])
    W = Tensor(np.random.default_rng(1).normal(size=(3, 2)))
    out, beta = nab_forward(Tensor(ctx.features), ctx, W, Tensor(np.ones((4, 1))))
    np.testing.assert_array_equal(beta.data, [1.0])
    np.testing.assert_allclose(out.data, elu(ctx.features @ W.data))


def test_nab_identical_neighbors_split_evenly():
    ctx = ctx_for(3, [(0, 1), (0, 2)])
    X = ctx.features.copy()
    X[1] = X[2] = X[0]
    W = Tensor(np.random.default_rng(2).normal(size=(3, 2)))
    _, beta = nab_forward(Tensor(X), ctx, W, Tensor(np.random.default_rng(3).normal(size=(4, 1))))
    np.testing.assert_allclose(beta.data[ctx.indptr[1]:ctx.indptr[2]], [0.5, 0.5])
    np.testing.assert_allclose(beta.data[ctx.indptr[0]:ctx.indptr[1]], 1 / 3)


def test_nab_star_matches_dense_reference():
    ctx = ctx_for(4, [(0, 1), (0, 2), (0, 3)], F=5, seed=4)
    rng = np.random.default_rng(5)
    W, a = rng.normal(size=(5, 3)), rng.normal(size=6)
    out, beta = nab_forward(Tensor(ctx.features), ctx, Tensor(W), Tensor(a[:, None]))
    A = np.eye(4)
    A[0, 1:] = A[1:, 0] = 1
    ref_out, ref_B = dense_nab(ctx.features, A, W, a)
    np.testing.assert_allclose(out.data, ref_out, rtol=1e-12)
    np.testing.assert_allclose(beta.data, ref_B[ctx.dst, ctx.indices], rtol=1e-12)
    for lo, hi in zip(ctx.indptr[:-1], ctx.indptr[1:]):
        assert abs(beta.data[lo:hi].sum() - 1) <= 1e-12


def test_nab_requires_self_loops_and_right_vector():
    ctx = ctx_for(3, [(0, 1)])
    bare = GraphContext(Graph(3, np.array([[0, 1]])), ctx.features, ctx.labels, ctx.split, ctx.partition)
    with pytest.raises(ContractError):
        nab_forward(Tensor(ctx.features), bare, Tensor(np.ones((3, 2))), Tensor(np.ones((4, 1))))
    with pytest.raises(ShapeError):
        nab_forward(Tensor(ctx.features), ctx, Tensor(np.ones((3, 2))), Tensor(np.ones((3, 1))))


# ---------------------------------------------------------------- fusion and heads

def test_combine_neutral_and_absorbing():
    rng = np.random.default_rng(6)
    nab = rng.normal(size=(5, 3))
    out = combine_head(Tensor(nab), Tensor(np.ones((5, 3))), Tensor(np.eye(3))).data
    np.testing.assert_allclose(out, elu(nab))
    fab = rng.normal(size=(5, 3))
    fab[2] = 0
    out = combine_head(Tensor(nab), Tensor(fab), Tensor(rng.normal(size=(3, 3)))).data
    np.testing.assert_array_equal(out[2], 0)
    with pytest.raises(ShapeError):
        combine_head(Tensor(nab), Tensor(np.ones((5, 2))), Tensor(np.eye(3)))


def test_combine_matches_dense():
    rng = np.random.default_rng(7)
    nab, fab, Wo = rng.normal(size=(5, 3)), rng.normal(size=(5, 3)), rng.normal(size=(3, 3))
    np.testing.assert_allclose(combine_head(Tensor(nab), Tensor(fab), Tensor(Wo)).data,
                               elu((nab * fab) @ Wo), rtol=1e-12)


def test_multi_head_examples():
    rng = np.random.default_rng(8)
    h1, h2 = rng.normal(size=(4, 2)), rng.normal(size=(4, 2))
    np.testing.assert_allclose(multi_head([Tensor(h1)], Tensor(np.ones(1))).data, elu(h1))
    for n in (2, 5):
        same = multi_head([Tensor(h1)] * n, Tensor(np.ones(n))).data
        np.testing.assert_allclose(same, elu(h1), rtol=1e-12)
    np.testing.assert_allclose(multi_head([Tensor(h1), Tensor(h2)], Tensor([2.0, 0.0])).data, elu(h1))
    np.testing.assert_allclose(multi_head([Tensor(h1)], Tensor(np.ones(1)), activation=False).data, h1)
    with pytest.raises(ContractError):
        multi_head([], Tensor(np.ones(0)))
    with pytest.raises(ShapeError):
        multi_head([Tensor(h1)], Tensor(np.ones(2)))


# ---------------------------------------------------------------- whole model

@pytest.fixture
def sbm30():
    ds = generate_sbm(SbmSpec(n_per_class=10, n_classes=3, n_features=12, signal_dims_per_class=3, seed=0))
    return ds, make_split(ds.labels, 3, 6, 9, 0)


def test_config_validation():
    for bad in (dict(heads=0), dict(layers=0), dict(pool=0), dict(dropout=1.0), dict(hidden=0),
                dict(epochs=-1), dict(theta_init="ones")):
        with pytest.raises(ContractError):
            ModelConfig(**bad)
    cfg = ModelConfig(heads=3, seed=4)
    assert ModelConfig.from_dict({**cfg.to_dict(), "unknown": 1}) == cfg
    assert cfg.widths(30, 3) == [(30, 64), (64, 3)]


def test_init_params_shapes():
    cfg = ModelConfig(heads=2, hidden=4)
    p = init_params(cfg, 6, 3)
    assert p["l0.h1.W_n"].shape == (6, 4) and p["l0.h0.a"].shape == (8, 1)
    assert p["l1.h0.theta"].shape == (3, 4) and p["l1.h0.W_o"].shape == (3, 3)
    np.testing.assert_array_equal(p["l0.gates"].data, [1.0, 1.0])
    assert not any(k.endswith(("W_f", "theta")) for k in init_params(ModelConfig(use_fab=False), 6, 3))


def test_model_smoke_and_eval_determinism(sbm30):
    ds, split = sbm30
    cfg = ModelConfig(heads=2, hidden=8)
    ctx = GraphContext.build(ds, split)
    params = init_params(cfg, 12, 3)
    logits, state = model_forward(ctx, params, cfg)
    assert logits.shape == (30, 3) and np.all(np.isfinite(logits.data))
    again, _ = model_forward(ctx, params, cfg)
    assert np.array_equal(logits.data, again.data)
    for layer in state.layers:
        beta = layer["beta"]
        for h in range(cfg.heads):
            sums = np.add.reduceat(beta[h], ctx.indptr[:-1])
            np.testing.assert_allclose(sums, 1.0, atol=1e-12)
        np.testing.assert_allclose(layer["alpha"].sum(axis=2), 1.0, atol=1e-12)


def test_train_mode_without_dropout_equals_eval(sbm30):
    ds, split = sbm30
    cfg = ModelConfig(heads=2, hidden=8, dropout=0.0)
    ctx = GraphContext.build(ds, split)
    params = init_params(cfg, 12, 3)
    a, _ = model_forward(ctx, params, cfg)
    b, _ = model_forward(ctx, params, cfg, training=True, rng=np.random.default_rng(0))
    assert np.array_equal(a.data, b.data)
    with pytest.raises(ContractError):
        model_forward(ctx, params, ModelConfig(heads=2, hidden=8), training=True)


def test_nab_only_ablation_is_attention_network(sbm30):
    ds, split = sbm30
    cfg = ModelConfig(heads=1, hidden=4, layers=1, use_fab=False)
    ctx = GraphContext.build(ds, split)
    params = init_params(cfg, 12, 3)
    logits, _ = model_forward(ctx, params, cfg)
    nab, _ = nab_forward(Tensor(ds.features), ctx, params["l0.h0.W_n"], params["l0.h0.a"])
    expected = elu(nab.data @ params["l0.h0.W_o"].data)
    np.testing.assert_allclose(logits.data, expected, rtol=1e-12)


def test_full_model_gradient_check():
    ds = generate_sbm(SbmSpec(n_per_class=4, n_classes=3, n_features=6, signal_dims_per_class=2,
                              p_in=0.5, p_out=0.1, seed=1))
    split = make_split(ds.labels, 2, 3, 3, 1)
    cfg = ModelConfig(hidden=4, heads=2, pool=2, dropout=0.0)
    ctx = GraphContext.build(ds, split)
    params = init_params(cfg, 6, 3)
    y = ds.labels.labels
    err = grad_check(lambda ps: loss(model_forward(ctx, ps, cfg)[0], y, split.train), params, eps=1e-4)
    assert err <= 1e-4


def test_model_permutation_equivariance():
    ds = generate_sbm(SbmSpec(n_per_class=20, n_classes=3, seed=13))
    split = make_split(ds.labels, 4, 3, 3, 13)
    assert distinct_similarities(ds, split)
    cfg = ModelConfig(heads=2, hidden=8)
    params = init_params(cfg, 30, 3)
    logits, _ = model_forward(GraphContext.build(ds, split), params, cfg)
    perm = np.random.default_rng(1).permutation(ds.n_nodes)
    pds, psplit = relabel(ds, split, perm)
    plogits, _ = model_forward(GraphContext.build(pds, psplit), params, cfg)
    assert np.array_equal(plogits.data[perm], logits.data)


def test_loss_examples():
    assert float(loss(Tensor(np.zeros((2, 4))), [0, 3], [0, 1]).data) == pytest.approx(math.log(4))
    single = float(loss(Tensor([[1.0, 2.0]]), LabelSet(np.array([1]), 2), [0]).data)
    assert single == pytest.approx(-math.log(math.e ** 2 / (math.e + math.e ** 2)))
    assert float(loss(Tensor([[60.0, 0.0]]), [0], [0]).data) < 1e-20
    with pytest.raises(ContractError):
        loss(Tensor(np.zeros((2, 2))), [0, 1], [])
