import os
import pytest
from feature_encoder import (
    EDGE_FEATURES, NODE_FEATURES, SCHEMA_LINE, LabelsFile, edge_vector, encode_features, node_vector, sample_degrees,
)
from graph_store import GraphStore
from sampler import SamplerConfig, sample_bfs

E95 = 'e95d451f311f8c0c7d564adcbaada5d8a936d85f1e7daf7844474b96baebe7b0'


@pytest.fixture
def store_2817(graph_2817):
    store = GraphStore()
    for ref, props in graph_2817.nodes.items():
        store.add_node(ref.key, props.get('script_type'))
    for e in graph_2817.edges:
        store.add_edge(e.src.key, e.dst.key, e.type.value, e.value, e.height)
    return store


@pytest.fixture
def coinbase_sample(store_2817):
    return sample_bfs('coinbase', SamplerConfig(h_max=1), store_2817)


def read_rows(path):
    with open(path, encoding='utf-8') as f:
        lines = f.read().splitlines()
    assert lines[0] + '\n' == SCHEMA_LINE
    return [line.split('\t') for line in lines[1:]]


def test_feature_layout():
    assert len(NODE_FEATURES) == 4 + 10 + 2
    assert NODE_FEATURES[:4] == ['is_Coinbase', 'is_Script', 'is_Tx', 'is_Block']
    assert NODE_FEATURES[-2:] == ['in_degree', 'out_degree']
    assert len(EDGE_FEATURES) == 6 + 2


def test_node_vectors(coinbase_sample, store_2817):
    p2pk = f"script:0-{E95}"
    assert set(coinbase_sample.nodes) == {'coinbase', f"tx:{E95}", p2pk}
    degrees = sample_degrees(coinbase_sample)
    assert node_vector('coinbase', coinbase_sample, store_2817, degrees) == [1, 0, 0, 0] + [0] * 10 + [0, 2]

    vector = node_vector(p2pk, coinbase_sample, store_2817)
    assert vector[:4] == [0, 1, 0, 0]
    assert vector[4 + NODE_FEATURES[4:14].index('script_P2PK')] == 1
    assert sum(vector[4:14]) == 1
    assert vector[-2:] == [1, 0]


def test_edge_vector(coinbase_sample, store_2817):
    edge = next(e for e in coinbase_sample.edges if e[1] == f"tx:{E95}")
    assert edge_vector(edge, store_2817) == [1, 0, 0, 0, 0, 0, 5_000_000_000, 2817]


def test_encode_writes_three_files_and_label(tmp_path, coinbase_sample, store_2817):
    labels = LabelsFile(str(tmp_path / 'labels.tsv'))
    sample_dir = encode_features(coinbase_sample, store_2817, str(tmp_path), 's000000', labels)
    assert sorted(os.listdir(sample_dir)) == ['edges.tsv', 'label.txt', 'nodes.tsv']

    nodes = read_rows(os.path.join(sample_dir, 'nodes.tsv'))
    assert nodes[0] == ['node_key'] + NODE_FEATURES
    assert [row[0] for row in nodes[1:]] == list(coinbase_sample.nodes)

    edges = read_rows(os.path.join(sample_dir, 'edges.tsv'))
    assert edges[0] == ['src', 'dst'] + EDGE_FEATURES
    assert len(edges) == 1 + len(coinbase_sample.edges)

    assert read_rows(os.path.join(sample_dir, 'label.txt')) == [['ConnectedGraph']]
    assert read_rows(str(tmp_path / 'labels.tsv')) == [
        ['sample_id', 'root', 'method', 'label'],
        ['s000000', 'coinbase', 'bfs', 'ConnectedGraph'],
    ]


def test_encoding_is_byte_stable(tmp_path, coinbase_sample, store_2817):
    first = encode_features(coinbase_sample, store_2817, str(tmp_path / 'a'), 's1')
    second = encode_features(coinbase_sample, store_2817, str(tmp_path / 'b'), 's1')
    for name in ('nodes.tsv', 'edges.tsv', 'label.txt'):
        with open(os.path.join(first, name), 'rb') as f1, open(os.path.join(second, name), 'rb') as f2:
            assert f1.read() == f2.read()
