import os
import pytest
from block_parser import block_parser
from config import Config, SETTINGS
from graph_builder import build_block_graph
from chain_factory import ChainFactory, to_bytes, write_fixtures

FIXTURES_DIR = os.path.join(os.path.dirname(__file__), 'fixtures')


@pytest.fixture(autouse=True)
def restore_config(monkeypatch):
    """Config is class-level state; give every test a clean copy."""
    for key in list(os.environ):
        if key.startswith('BLOCKGRAPH_'):
            monkeypatch.delenv(key)
    saved = {key: getattr(Config, key) for key in SETTINGS}
    saved_raw = dict(Config._raw)
    yield
    for key, value in saved.items():
        setattr(Config, key, value)
    Config._raw.clear()
    Config._raw.update(saved_raw)


@pytest.fixture
def fixtures_dir():
    return FIXTURES_DIR


@pytest.fixture
def block_2817_bytes():
    with open(os.path.join(FIXTURES_DIR, '2817.json'), 'rb') as f:
        return f.read()


@pytest.fixture
def block_2817(block_2817_bytes):
    return block_parser.parse(block_2817_bytes)


@pytest.fixture
def graph_2817(block_2817):
    return build_block_graph(block_2817)


@pytest.fixture
def factory():
    return ChainFactory(seed=7)


@pytest.fixture
def chain_dir(tmp_path):
    """Fixture directory holding a 40-block synthetic chain starting at height 0."""
    directory = tmp_path / 'blocks'
    write_fixtures(str(directory), ChainFactory(seed=11).blocks(40))
    return str(directory)


def parse_blocks(documents):
    return [block_parser.parse(to_bytes(document)) for document in documents]
