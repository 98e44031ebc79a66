"""Subgraph samplers: breadth-first, depth-first and decaying Forest Fire."""
from collections import deque
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, Optional, Tuple
import networkx as nx
import numpy as np
from error_handler import ConfigError
from graph_store import EdgeId, GraphStore
from logger import setup_logger

logger = setup_logger(__name__)

CONNECTED = 'ConnectedGraph'
FOREST = 'Forest'


@dataclass(frozen=True)
class SamplerConfig:
    """Sampling limits and filters.

    Attributes:
        h_max: Maximum hop distance for BFS/DFS; last Forest Fire hop level (levels 0..h_max)
        n: Forest Fire budget of the root at hop 0
        delta: Budget decay per hop; each node traversed at hop h samples at most max(n - h * delta, 0) neighbours
        direction: 'both', 'out' or 'in'
        node_whitelist / node_blacklist: Node kinds allowed / refused (None whitelist allows all)
        edge_whitelist / edge_blacklist: Edge types allowed / refused
        stop_on: Node kinds or edge types that are included but not expanded
        min_nodes, max_nodes, min_edges, max_edges: Size constraints (None max means unbounded)
        rng_seed: Base seed; sample i uses the stream (rng_seed, i)
    """
    h_max: int = 3
    n: int = 10
    delta: int = 3
    direction: str = 'both'
    node_whitelist: Optional[FrozenSet[str]] = None
    node_blacklist: FrozenSet[str] = frozenset()
    edge_whitelist: Optional[FrozenSet[str]] = None
    edge_blacklist: FrozenSet[str] = frozenset()
    stop_on: FrozenSet[str] = frozenset()
    min_nodes: int = 1
    max_nodes: Optional[int] = None
    min_edges: int = 0
    max_edges: Optional[int] = None
    rng_seed: int = 0

    def __post_init__(self):
        if self.h_max < 0:
            raise ConfigError("h_max must be >= 0")
        if self.n < 1:
            raise ConfigError("n must be >= 1")
        if self.direction not in ('both', 'out', 'in'):
            raise ConfigError(f"direction must be both, out or in, got {self.direction!r}")
        if self.max_nodes is not None and self.max_nodes < self.min_nodes:
            raise ConfigError("max_nodes must be >= min_nodes")
        if self.max_edges is not None and self.max_edges < self.min_edges:
            raise ConfigError("max_edges must be >= min_edges")

    def hop_budget(self, hop: int) -> int:
        return max(self.n - hop * self.delta, 0)

    def node_allowed(self, kind: str) -> bool:
        if self.node_whitelist is not None and kind not in self.node_whitelist:
            return False
        return kind not in self.node_blacklist

    def edge_allowed(self, edge_type: str) -> bool:
        if self.edge_whitelist is not None and edge_type not in self.edge_whitelist:
            return False
        return edge_type not in self.edge_blacklist


@dataclass
class Subgraph:
    """A sampled subgraph. Node and edge lists keep insertion order."""
    root: str
    method: str
    nodes: Dict[str, None] = field(default_factory=dict)
    edges: Dict[EdgeId, None] = field(default_factory=dict)
    label: Optional[str] = None
    # (hop, nodes drawn) per Forest Fire traversal
    hop_log: List[Tuple[int, int]] = field(default_factory=list)
    rejected: Optional[str] = None

    @property
    def node_list(self) -> List[str]:
        return list(self.nodes)

    @property
    def edge_list(self) -> List[EdgeId]:
        return list(self.edges)


def label_connectivity(subgraph: Subgraph) -> str:
    """ConnectedGraph iff the sample is weakly connected; a lone node counts as connected."""
    graph = nx.MultiDiGraph()
    graph.add_nodes_from(subgraph.nodes)
    graph.add_edges_from((src, dst, k) for src, dst, k in subgraph.edges)
    if graph.number_of_nodes() <= 1:
        return CONNECTED
    return CONNECTED if nx.is_weakly_connected(graph) else FOREST


class _Limits:
    def __init__(self, cfg: SamplerConfig, subgraph: Subgraph):
        self.cfg = cfg
        self.subgraph = subgraph

    def room_for_node(self) -> bool:
        return self.cfg.max_nodes is None or len(self.subgraph.nodes) < self.cfg.max_nodes

    def room_for_edge(self) -> bool:
        return self.cfg.max_edges is None or len(self.subgraph.edges) < self.cfg.max_edges

    def add_edge(self, edge_id: EdgeId) -> bool:
        if edge_id in self.subgraph.edges:
            return True
        if not self.room_for_edge():
            return False
        self.subgraph.edges[edge_id] = None
        return True


def _check_root(root: str, cfg: SamplerConfig, store: GraphStore):
    store.require(root)
    if not cfg.node_allowed(store.kind(root)):
        raise ConfigError(f"Root {root} has filtered node kind {store.kind(root)}")


def _expandable(key: str, root: str, store: GraphStore, cfg: SamplerConfig) -> bool:
    return key == root or store.kind(key) not in cfg.stop_on


def _grouped_neighbours(key: str, store: GraphStore, cfg: SamplerConfig) -> Dict[str, List[EdgeId]]:
    """Admissible neighbours of ``key`` with the edges reaching each, in store order."""
    grouped: Dict[str, List[EdgeId]] = {}
    for edge_id, other in store.incident(key, cfg.direction):
        edge_type = store.edge_data(edge_id)['type']
        if not cfg.edge_allowed(edge_type) or not cfg.node_allowed(store.kind(other)):
            continue
        grouped.setdefault(other, []).append(edge_id)
    return grouped


def _finish(subgraph: Subgraph, cfg: SamplerConfig) -> Subgraph:
    subgraph.label = label_connectivity(subgraph)
    if len(subgraph.nodes) < cfg.min_nodes:
        subgraph.rejected = f"{len(subgraph.nodes)} nodes < min_nodes {cfg.min_nodes}"
    elif len(subgraph.edges) < cfg.min_edges:
        subgraph.rejected = f"{len(subgraph.edges)} edges < min_edges {cfg.min_edges}"
    if subgraph.rejected:
        logger.info(f"Rejected {subgraph.method} sample at {subgraph.root}: {subgraph.rejected}")
    return subgraph


def sample_bfs(root: str, cfg: SamplerConfig, store: GraphStore) -> Subgraph:
    """Breadth-first sample around ``root``.

    A node is added with every parallel edge from the node that discovered it.

    Raises:
        NotFoundError: Root not in the store
    """
    _check_root(root, cfg, store)
    subgraph = Subgraph(root=root, method='bfs')
    limits = _Limits(cfg, subgraph)
    subgraph.nodes[root] = None
    depth = {root: 0}
    stopped = set()
    queue = deque([root])

    while queue:
        key = queue.popleft()
        if depth[key] >= cfg.h_max or key in stopped or not _expandable(key, root, store, cfg):
            continue
        for other, edge_ids in _grouped_neighbours(key, store, cfg).items():
            if other in subgraph.nodes:
                continue
            if not limits.room_for_node() or not limits.room_for_edge():
                break
            subgraph.nodes[other] = None
            depth[other] = depth[key] + 1
            for edge_id in edge_ids:
                if not limits.add_edge(edge_id):
                    break
                if store.edge_data(edge_id)['type'] in cfg.stop_on:
                    stopped.add(other)
            queue.append(other)

    return _finish(subgraph, cfg)


def sample_dfs(root: str, cfg: SamplerConfig, store: GraphStore) -> Subgraph:
    """Depth-first (preorder) sample around ``root``.

    Raises:
        NotFoundError: Root not in the store
    """
    _check_root(root, cfg, store)
    subgraph = Subgraph(root=root, method='dfs')
    limits = _Limits(cfg, subgraph)
    stack: List[Tuple[str, int, List[EdgeId]]] = [(root, 0, [])]

    while stack:
        key, depth, via = stack.pop()
        if key in subgraph.nodes:
            continue
        if not limits.room_for_node() or (via and not limits.room_for_edge()):
            break
        subgraph.nodes[key] = None
        stopped = False
        for edge_id in via:
            if not limits.add_edge(edge_id):
                break
            if store.edge_data(edge_id)['type'] in cfg.stop_on:
                stopped = True
        if depth >= cfg.h_max or stopped or not _expandable(key, root, store, cfg):
            continue
        children = [
            (other, depth + 1, edge_ids)
            for other, edge_ids in _grouped_neighbours(key, store, cfg).items()
            if other not in subgraph.nodes
        ]
        stack.extend(reversed(children))

    return _finish(subgraph, cfg)


def make_rng(seed: int, sample_index: int = 0) -> np.random.Generator:
    """Counter-based generator for one sample."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, sample_index])))


def sample_forest_fire(root: str, cfg: SamplerConfig, store: GraphStore,
                       rng: Optional[np.random.Generator] = None) -> Subgraph:
    """Forest Fire sample whose per-node budget decays by ``delta`` each hop.

    Every traversed node v at hop h draws at most max(n - h * delta, 0) of
    its own not-yet-visited neighbours, uniformly without replacement. An
    edge of v is kept only when its directed target is one of those fresh
    nodes, and only those targets are traversed next, at hop h + 1. Hops run
    from 0 to h_max inclusive, so sampled nodes lie at most h_max + 1 steps
    from the root. Nodes drawn through in-edges stay unconnected, which is
    why samples can be forests.

    Args:
        root: Root node key
        cfg: Sampler configuration
        store: Graph to sample from
        rng: Generator; defaults to the stream (cfg.rng_seed, 0)

    Raises:
        NotFoundError: Root not in the store
    """
    _check_root(root, cfg, store)
    rng = rng if rng is not None else make_rng(cfg.rng_seed)
    subgraph = Subgraph(root=root, method='forest_fire')
    limits = _Limits(cfg, subgraph)
    subgraph.nodes[root] = None

    _traverse_hop(root, 0, rng, cfg, store, subgraph, limits)
    return _finish(subgraph, cfg)


def _traverse_hop(key: str, hop: int, rng: np.random.Generator, cfg: SamplerConfig,
                  store: GraphStore, subgraph: Subgraph, limits: _Limits):
    if not _expandable(key, subgraph.root, store, cfg):
        return
    reached = _sample_neighbours(key, hop, rng, cfg, store, subgraph, limits)
    if hop < cfg.h_max:
        for other in reached:
            _traverse_hop(other, hop + 1, rng, cfg, store, subgraph, limits)


def _sample_neighbours(key: str, hop: int, rng: np.random.Generator, cfg: SamplerConfig,
                       store: GraphStore, subgraph: Subgraph, limits: _Limits) -> List[str]:
    """Draw this node's share of hop ``hop`` and return the targets to traverse next."""
    grouped = _grouped_neighbours(key, store, cfg)
    pool = [other for other in grouped if other not in subgraph.nodes]
    take = min(cfg.hop_budget(hop), len(pool))
    if cfg.max_nodes is not None:
        take = max(min(take, cfg.max_nodes - len(subgraph.nodes)), 0)
    chosen = [pool[i] for i in rng.choice(len(pool), size=take, replace=False)] if take > 0 else []
    for other in chosen:
        subgraph.nodes[other] = None
    subgraph.hop_log.append((hop, len(chosen)))

    reached: Dict[str, None] = {}
    stopped = set()
    for other in chosen:
        for edge_id in grouped[other]:
            # Keep edges whose directed target is a freshly sampled node
            if edge_id[1] != other:
                continue
            if not limits.add_edge(edge_id):
                return [node for node in reached if node not in stopped]
            reached[other] = None
            if store.edge_data(edge_id)['type'] in cfg.stop_on:
                stopped.add(other)
    return [node for node in reached if node not in stopped]


SAMPLERS = {
    'bfs': sample_bfs,
    'dfs': sample_dfs,
    'forest_fire': sample_forest_fire,
}


def sample(method: str, root: str, cfg: SamplerConfig, store: GraphStore, sample_index: int = 0) -> Subgraph:
    """Dispatch to a sampler; Forest Fire draws from the stream (rng_seed, sample_index)."""
    if method not in SAMPLERS:
        raise ConfigError(f"Unknown sampling method {method!r}")
    if method == 'forest_fire':
        return sample_forest_fire(root, cfg, store, make_rng(cfg.rng_seed, sample_index))
    return SAMPLERS[method](root, cfg, store)


def choose_roots(store: GraphStore, count: int, cfg: SamplerConfig) -> List[str]:
    """Pick ``count`` distinct admissible roots uniformly, reproducibly from rng_seed."""
    eligible = sorted(key for key in store.nodes() if cfg.node_allowed(store.kind(key)))
    if not eligible:
        return []
    rng = make_rng(cfg.rng_seed, 2 ** 32)
    picks = rng.choice(len(eligible), size=min(count, len(eligible)), replace=False)
    return [eligible[i] for i in picks]
