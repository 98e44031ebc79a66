import math
import random
import pytest
from degree_stats import (
    binned, degree_bin, degree_entropy, degree_summary, density, histogram_rows, lag_pearson, pearson,
    rolling_mean,
)
from error_handler import ConfigError
from graph_builder import build_block_graph
from graph_store import GraphStore
from tsv_writer import BatchLayout, write_batches
from chain_factory import ChainFactory
from conftest import parse_blocks


@pytest.fixture(scope='module')
def chain_graphs():
    return [build_block_graph(block) for block in parse_blocks(ChainFactory(seed=17).blocks(30))]


def test_density():
    assert density(1, 0) is None
    assert density(2, 1) == 0.5
    assert density(4, 6) == 0.5


def test_entropy_of_distinct_values():
    h, h_max, h_n, m = degree_entropy([1, 1, 2, 2])
    assert m == 2
    assert h == pytest.approx(math.log(2))
    assert h_max == pytest.approx(math.log(2))
    assert h_n == pytest.approx(1.0)


def test_entropy_per_node():
    h, h_max, h_n, m = degree_entropy([1, 1, 1, 1], 'per_node')
    assert h == pytest.approx(math.log(4))
    assert h_max == pytest.approx(math.log(4))
    assert h_n == pytest.approx(1.0)
    assert m == 1
    # A distribution concentrated on one node carries no entropy
    h, h_max, h_n, _ = degree_entropy([5, 0, 0], 'per_node')
    assert h == 0.0
    assert h_max == pytest.approx(math.log(3))
    assert h_n == 0.0


def test_degenerate_entropies():
    assert degree_entropy([3, 3, 3]) == (0.0, 0.0, 0.0, 1)
    assert degree_entropy([]) == (0.0, 0.0, 0.0, 0)
    with pytest.raises(ConfigError):
        degree_entropy([1], 'shannon')


def test_normalized_entropy_stays_in_unit_interval(chain_graphs):
    store = GraphStore.from_edges((e.src.key, e.dst.key, e.type.value) for g in chain_graphs for e in g.edges)
    for node_class in ('Block', 'Tx', 'Script'):
        for mode in ('distinct_values', 'per_node'):
            summary = degree_summary(store, node_class, mode)
            for stats in summary.directions.values():
                assert 0.0 <= stats.normalized_entropy <= 1.0


def test_bins():
    assert [degree_bin(d) for d in (0, 9, 10, 25)] == [0, 0, 10, 20]
    assert binned([0, 3, 25]) == [(0, 2, 1), (10, 0, 0), (20, 1, 1)]
    assert binned([]) == []


def test_block_degrees_of_block_2817(graph_2817):
    store = GraphStore.from_edges((e.src.key, e.dst.key, e.type.value) for e in graph_2817.edges)
    summary = degree_summary(store, 'Block')
    # 23 Redeems in, 8 Confirms plus 15 Credits out
    assert summary.n_nodes == 1
    assert summary.n_edges == 46
    assert summary.density is None
    assert summary.directions['in'].mean == 23
    assert summary.directions['out'].mean == 23
    assert summary.histogram == {(20, 20): 1}
    assert list(histogram_rows(summary)) == [[20, 20, 1, 1]]


def test_manifest_and_store_agree(tmp_path, chain_graphs):
    manifest = write_batches(chain_graphs, BatchLayout(str(tmp_path / 'out'), batch_size=8))
    store = GraphStore.load(manifest.out_dir)
    for node_class in ('Block', 'Tx', 'Script'):
        from_manifest = degree_summary(manifest, node_class)
        from_store = degree_summary(store, node_class)
        assert from_manifest.n_nodes == from_store.n_nodes
        assert from_manifest.n_edges == from_store.n_edges
        assert from_manifest.histogram == from_store.histogram
        assert from_manifest.marginals == from_store.marginals
        for direction, stats in from_manifest.directions.items():
            assert vars(stats) == pytest.approx(vars(from_store.directions[direction]))


def test_isolated_nodes_count_toward_n():
    store = GraphStore.from_edges([('tx:a', 'tx:b', 'Transfers')])
    store.add_node('tx:c')
    summary = degree_summary(store, 'Tx')
    assert summary.n_nodes == 3
    assert summary.n_edges == 1
    assert summary.density == pytest.approx(1 / 6)
    assert summary.marginals['total'] == [(0, 3, 1)]


def test_coinbase_has_no_degree_summary():
    with pytest.raises(ConfigError):
        degree_summary(GraphStore(), 'Coinbase')


def test_rolling_mean():
    assert rolling_mean([1, 2, 3, 4], window=2) == [1.0, 1.5, 2.5, 3.5]
    assert rolling_mean([2, 4, 6], window=10) == [2.0, 3.0, 4.0]
    assert rolling_mean([], window=3) == []
    with pytest.raises(ValueError):
        rolling_mean([1], window=0)


def test_pearson():
    assert pearson([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0)
    assert pearson([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)
    assert pearson([1], [1]) is None
    assert pearson([1, 1, 1], [1, 2, 3]) is None
    with pytest.raises(ValueError):
        pearson([1, 2], [1])


def naive_pearson(x, y):
    mean_x = math.fsum(x) / len(x)
    mean_y = math.fsum(y) / len(y)
    cov = math.fsum((a - mean_x) * (b - mean_y) for a, b in zip(x, y))
    var_x = math.fsum((a - mean_x) ** 2 for a in x)
    var_y = math.fsum((b - mean_y) ** 2 for b in y)
    return cov / math.sqrt(var_x * var_y)


@pytest.mark.parametrize('seed', range(20))
def test_rolling_mean_matches_naive_window(seed):
    rng = random.Random(seed)
    series = [rng.uniform(-1e6, 1e6) for _ in range(rng.randint(1, 300))]
    window = rng.randint(1, 40)
    naive = [math.fsum(series[max(0, i + 1 - window):i + 1]) / (i + 1 - max(0, i + 1 - window))
             for i in range(len(series))]
    assert rolling_mean(series, window=window) == pytest.approx(naive, rel=1e-9, abs=1e-6)


@pytest.mark.parametrize('seed', range(20))
def test_pearson_matches_naive_formula(seed):
    rng = random.Random(seed)
    size = rng.randint(2, 200)
    x = [rng.uniform(-100, 100) for _ in range(size)]
    y = [a * rng.uniform(-2, 2) + rng.gauss(0, 30) for a in x]
    assert pearson(x, y) == pytest.approx(naive_pearson(x, y), rel=1e-9, abs=1e-12)


@pytest.mark.parametrize('seed', range(20))
def test_lag_pearson_matches_naive_pairs(seed):
    rng = random.Random(seed)
    series = [None if rng.random() < 0.2 else rng.uniform(0, 50) for _ in range(rng.randint(20, 200))]
    lag = rng.randint(1, 5)
    pairs = [(series[i], series[i + lag]) for i in range(len(series) - lag)
             if series[i] is not None and series[i + lag] is not None]
    first, second = [a for a, _ in pairs], [b for _, b in pairs]
    assert lag_pearson(series, lag=lag) == pytest.approx(naive_pearson(first, second), rel=1e-9, abs=1e-12)


def test_lag_pearson_skips_gaps():
    assert lag_pearson([1, 2, 3, 4, 5]) == pytest.approx(1.0)
    assert lag_pearson([1, None, 3, 4, 5, 6]) == pytest.approx(1.0)
    assert lag_pearson([None, None]) is None
