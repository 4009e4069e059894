import math

import numpy as np
import pytest

from graph_decipher.augment import (AugmentPlan, SweepReport, apply_plan, build_two_class_dataset,
                                    clone_nodes, extract_representative, minority_train_count,
                                    ratio_sweep, rebalance_all, rebalance_counts)
from graph_decipher.errors import ContractError
from graph_decipher.fab import FeatureAttention
from graph_decipher.graph import Dataset, Graph, LabelSet, SbmSpec, Split, generate_sbm, make_split
from graph_decipher.model import ModelConfig


def dense_case(F=20, n=12, seed=0):
    """Every feature strictly positive so zeroed entries are visible."""
    rng = np.random.default_rng(seed)
    g = Graph.from_edges(n, [(i, (i + 1) % n) for i in range(n)], undirected=True)
    y = np.arange(n) % 2
    ds = Dataset(g, rng.uniform(0.5, 1.5, size=(n, F)), LabelSet(y, 2))
    return ds, Split(np.arange(8), np.array([8, 9]), np.array([10, 11]))


# ---------------------------------------------------------------- representative sets

def test_uniform_alpha_keeps_every_dim():
    rep = extract_representative(np.full((2, 7), 1 / 7))
    assert all(d.size == 7 for d in rep.dims)


def test_peaked_alpha_keeps_one_dim():
    a = np.full((1, 5), 1e-6)
    a[0, 3] = 1 - 4e-6
    rep = extract_representative(FeatureAttention(a, np.ones((1, 5))))
    np.testing.assert_array_equal(rep.dims[0], [3])


def test_threshold_fallback_to_argmax():
    rep = extract_representative(np.array([[0.1, 0.3, 0.6]]), tau=0.9)
    np.testing.assert_array_equal(rep.dims[0], [2])
    with pytest.raises(ContractError):
        extract_representative(np.ones(3))


# ---------------------------------------------------------------- cloning

def test_ori_clone_is_bit_equal():
    ds, split = dense_case()
    out, osplit = clone_nodes(ds, split, 0, 1, "ORI")
    assert out.n_nodes == 13
    assert out.features[12].tobytes() == ds.features[0].tobytes()
    assert out.node_ids[12] == "0#clone0"


def test_aa_with_all_dims_equals_ori():
    ds, split = dense_case()
    rep = extract_representative(np.full((2, 20), 1 / 20))
    aa, _ = clone_nodes(ds, split, 1, 5, "AA", rep)
    ori, _ = clone_nodes(ds, split, 1, 5, "ORI")
    assert np.array_equal(aa.features, ori.features)
    assert np.array_equal(aa.graph.edges, ori.graph.edges)


def rep_first_half(F=20):
    a = np.full((2, F), 0.5 / (F / 2))
    a[:, F // 2:] = 0.01 / (F / 2)
    return extract_representative(a)


def test_aa_clears_every_unrepresentative_dim():
    ds, split = dense_case()
    out, _ = clone_nodes(ds, split, 0, 3, "AA", rep_first_half())
    assert np.all(out.features[12:, 10:] == 0)
    assert np.array_equal(out.features[12:, :10], ds.features[[0, 2, 4], :10])


def test_ap_zeroed_count_binomial():
    ds, split = dense_case()
    out, _ = clone_nodes(ds, split, 0, 200, "AP", rep_first_half(), p_a=0.5, seed=3)
    clones = out.features[12:]
    zeroed = (clones[:, 10:] == 0).sum(axis=1)
    sd = math.sqrt(10 * 0.5 * 0.5) / math.sqrt(200)
    assert abs(zeroed.mean() - 5.0) <= 3 * sd
    assert np.all(clones[:, :10] != 0)


def test_an_replacements_come_from_the_category():
    ds, split = dense_case()
    out, _ = clone_nodes(ds, split, 1, 40, "AN", rep_first_half(), p_a=0.5, seed=1)
    pool = ds.features[[1, 3, 5, 7]]
    sources = np.array([1, 3, 5, 7] * 10)
    clones = out.features[12:]
    changed = clones != ds.features[sources]
    assert changed[:, :10].sum() == 0 and changed[:, 10:].sum() > 0
    for r, c in zip(*np.nonzero(changed)):
        assert clones[r, c] in pool[:, c]


@pytest.mark.parametrize("mode", ["ORI", "AA", "AP", "AN"])
def test_clone_invariants(mode):
    ds = generate_sbm(SbmSpec(n_per_class=15, seed=2))
    split = make_split(ds.labels, 5, 5, 5, 2)
    rep = extract_representative(np.vstack([np.full(30, 1 / 30)] * 2 + [np.eye(30)[4] * 0.9 + 0.1 / 30]))
    out, osplit = clone_nodes(ds, split, 2, 7, mode, rep, seed=5)
    n = ds.n_nodes
    assert np.array_equal(out.features[:n], ds.features)
    assert np.array_equal(out.labels.labels[:n], ds.labels.labels)
    assert out.node_ids[:n] == ds.node_ids
    old_edges = {tuple(e) for e in ds.graph.edges.tolist()}
    new_edges = {tuple(e) for e in out.graph.edges.tolist()}
    assert old_edges <= new_edges
    assert all(max(e) >= n for e in new_edges - old_edges)
    assert np.all(out.labels.labels[n:] == 2)
    clones = np.arange(n, n + 7)
    assert set(clones) <= set(osplit.train.tolist())
    assert not set(clones) & set(osplit.val.tolist() + osplit.test.tolist())
    sources = np.sort(split.train[ds.labels.labels[split.train] == 2])[np.arange(7) % 5]
    mask = rep.mask(2)
    assert np.array_equal(out.features[clones][:, mask], ds.features[sources][:, mask])
    for c, s in zip(clones, sources):
        nbrs = set(out.graph.neighbors(c).tolist())
        assert nbrs == set(ds.graph.neighbors(s).tolist()) | {s}
        assert c in out.graph.neighbors(s)


def test_clone_errors():
    ds, split = dense_case()
    with pytest.raises(ContractError):
        clone_nodes(ds, split, 0, 1, "XX")
    with pytest.raises(ContractError):
        clone_nodes(ds, split, 0, 1, "AA")
    with pytest.raises(ContractError):
        clone_nodes(ds, split, 0, 1, "AP", rep_first_half(), p_a=1.0)
    with pytest.raises(ContractError):
        AugmentPlan("AP", {0: -1})


def test_clone_edges_source_only():
    ds, split = dense_case()
    out, _ = clone_nodes(ds, split, 0, 1, "ORI", clone_edges="source-only")
    np.testing.assert_array_equal(out.graph.neighbors(12), [0])


# ---------------------------------------------------------------- two-class datasets

@pytest.fixture
def imbalance_source():
    ds = generate_sbm(SbmSpec(n_classes=3, class_sizes=(60, 60, 30), seed=1))
    return ds, make_split(ds.labels, 20, 15, 0, 1)


def test_two_class_ratios(imbalance_source):
    ds, split = imbalance_source
    bal, bsplit = build_two_class_dataset(ds, split, 0, 1, 10, seed=0)
    counts = np.bincount(bal.labels.labels[bsplit.train], minlength=2)
    assert counts[0] == counts[1] == 20
    low, lsplit = build_two_class_dataset(ds, split, 0, 1, 1, seed=0)
    assert np.bincount(low.labels.labels[lsplit.train], minlength=2)[1] == math.ceil(20 / 10)
    assert np.all(low.labels.labels[lsplit.test] == 1)
    assert minority_train_count(25, 3) == 8
    with pytest.raises(ContractError):
        build_two_class_dataset(ds, split, 1, 1, 5)


def test_two_class_edge_scan(imbalance_source):
    ds, split = imbalance_source
    sub, _ = build_two_class_dataset(ds, split, 0, 2, 5, seed=0)
    kept = np.flatnonzero(ds.labels.labels != 1)
    assert sub.n_nodes == kept.size
    expected = {(int(np.searchsorted(kept, s)), int(np.searchsorted(kept, d)))
                for s, d in ds.graph.edges.tolist() if s in set(kept) and d in set(kept)}
    assert {tuple(e) for e in sub.graph.edges.tolist()} == expected
    ids = set(sub.node_ids)
    assert not ids & {ds.node_ids[v] for v in np.flatnonzero(ds.labels.labels == 1)}


def test_sweep_report_format():
    rep = SweepReport([("ORI", 1, 0, 0.5), ("ORI", 5, 0, 0.75), ("ORI", 1, 1, 0.25), ("ORI", 5, 1, 0.75)])
    assert rep.to_tsv().splitlines()[1] == "ORI\t10:1\t0\t0.500000"
    s = rep.summary()["ORI"]
    assert s["mean"] == pytest.approx(0.5625) and s["best_ratio"] == "10:5"
    assert rep.mean("ORI", ratios=[1]) == pytest.approx(0.375)


def test_ratio_sweep_ori_ignores_p_a(imbalance_source):
    ds, split = imbalance_source
    cfg = ModelConfig(epochs=3, patience=3, heads=1, hidden=4)
    kw = dict(modes=("NONE", "ORI"), ratios=(1, 3), seeds=(0,), config=cfg)
    a = ratio_sweep(ds, split, 0, 1, p_a=0.2, **kw)
    b = ratio_sweep(ds, split, 0, 1, p_a=0.8, **kw)
    assert a.rows == b.rows and len(a.rows) == 4
    assert {r[1] for r in a.rows} == {1, 3}


# ---------------------------------------------------------------- rebalancing

def test_rebalance_counts_examples():
    assert rebalance_counts([100, 20]) == {0: 0, 1: 47}   # minority reaches 67
    assert rebalance_counts([30, 30, 30]) == {0: 0, 1: 0, 2: 0}
    with pytest.raises(ContractError):
        rebalance_counts([10, 2], 0.5)


def test_rebalance_all_reaches_target():
    ds = generate_sbm(SbmSpec(n_classes=3, class_sizes=(60, 30, 12), seed=0))
    split = make_split(ds.labels, [40, 10, 4], 5, 5, 0)
    alpha = np.full((3, 30), 1 / 30)
    out, osplit = rebalance_all(ds, split, alpha, 1.5, seed=2)
    counts = np.bincount(out.labels.labels[osplit.train], minlength=3)
    assert counts.max() / counts.min() <= 1.5
    again, _ = rebalance_all(ds, split, alpha, 1.5, seed=2)
    assert np.array_equal(again.features, out.features)
    balanced_split = make_split(ds.labels, 10, 5, 5, 0)
    same, _ = rebalance_all(ds, balanced_split, alpha)
    assert same.n_nodes == ds.n_nodes


def test_apply_plan_matches_sequential_clones():
    ds, split = dense_case()
    rep = rep_first_half()
    a, _ = apply_plan(ds, split, AugmentPlan("AP", {1: 2, 0: 3}, 0.5, 4), rep)
    b, bs = clone_nodes(ds, split, 0, 3, "AP", rep, 0.5, 4)
    b, _ = clone_nodes(b, bs, 1, 2, "AP", rep, 0.5, 4)
    assert np.array_equal(a.features, b.features)
