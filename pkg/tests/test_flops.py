import pytest

from graph_decipher.errors import ContractError
from graph_decipher.flops import GraphStats, count_flops, count_params, flop_breakdown
from graph_decipher.graph import SbmSpec, generate_sbm, make_split
from graph_decipher.model import ModelConfig, init_params

STATS = GraphStats(500, 4000, 100, 5)


def test_heads_linear_and_increasing():
    values = [count_flops(ModelConfig(heads=h), STATS) for h in (1, 2, 4, 6, 8, 10)]
    assert values[0] > 0
    assert all(b > a for a, b in zip(values, values[1:]))
    per_head = values[1] - values[0]
    assert values[2] - values[1] == pytest.approx(2 * per_head, rel=1e-12)
    assert values[5] == pytest.approx(values[0] + 9 * per_head, rel=1e-12)


def test_zero_heads_forbidden():
    with pytest.raises(ContractError):
        count_flops(ModelConfig(heads=0), STATS)


@pytest.mark.parametrize("field,values", [("hidden", (8, 16, 64)), ("layers", (1, 2, 3))])
def test_monotone_in_config(field, values):
    flops = [count_flops(ModelConfig(**{field: v}), STATS) for v in values]
    assert all(b > a for a, b in zip(flops, flops[1:]))


def test_monotone_in_graph_size():
    cfg = ModelConfig()
    base = count_flops(cfg, STATS)
    assert count_flops(cfg, GraphStats(600, 4000, 100, 5)) > base
    assert count_flops(cfg, GraphStats(500, 4000, 120, 5)) > base
    assert count_flops(cfg, GraphStats(500, 5000, 100, 5)) > base


def test_larger_pool_is_cheaper():
    stats = GraphStats(500, 4000, 100, 5, (40,) * 5)
    f = [count_flops(ModelConfig(pool=s), stats) for s in (1, 2, 3)]
    assert f[0] > f[1] > f[2]


def test_breakdown_sums_and_ablation():
    cfg = ModelConfig(heads=4)
    rows = flop_breakdown(cfg, STATS)
    total = sum(v for r in rows for k, v in r.items() if k != "layer")
    assert total == pytest.approx(count_flops(cfg, STATS), rel=1e-12)
    assert count_flops(ModelConfig(heads=4, use_fab=False), STATS) < count_flops(cfg, STATS)
    assert all(r["fab"] == 0 for r in flop_breakdown(ModelConfig(use_fab=False), STATS))


@pytest.mark.parametrize("kw", [dict(), dict(heads=3, hidden=5), dict(use_fab=False), dict(layers=3)])
def test_param_count_matches_initialized_model(kw):
    cfg = ModelConfig(**kw)
    params = init_params(cfg, 30, 3)
    assert count_params(cfg, 30, 3) == sum(p.data.size for p in params.values())


def test_stats_from_dataset():
    ds = generate_sbm(SbmSpec(n_per_class=10, seed=0))
    split = make_split(ds.labels, 4, 3, 3, 0)
    stats = GraphStats.from_dataset(ds, split)
    assert stats.n_nodes == 30 and stats.n_edges == ds.graph.n_edges
    assert stats.category_sizes == (4, 4, 4)
    assert count_flops(ModelConfig(), stats) > 0
    with pytest.raises(ContractError):
        GraphStats(10, 5, 3, 2, (1, 2, 3))
