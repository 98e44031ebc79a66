import os
from typing import Any, Dict, Iterable, Iterator, List, Optional, Tuple
import networkx as nx
from error_handler import NotFoundError, ParseError
from graph_model import EdgeType, NodeRef
from tsv_writer import EDGE_COLUMNS, Manifest, iter_edges, iter_unique_nodes, open_text, unescape_field
from logger import setup_logger

logger = setup_logger(__name__)

# (src key, dst key, parallel-edge key); unique inside the store
EdgeId = Tuple[str, str, int]


class GraphStore:
    """Read-only graph for sampling, keyed by serialized node keys.

    Node kinds come from the key prefix; script types from node files when
    they are available.
    """

    def __init__(self):
        self.graph = nx.MultiDiGraph()

    def add_node(self, key: str, script_type: Optional[str] = None):
        kind = NodeRef.from_key(key).kind
        if key in self.graph:
            if script_type and not self.graph.nodes[key].get('script_type'):
                self.graph.nodes[key]['script_type'] = script_type
            return
        self.graph.add_node(key, kind=kind.value, script_type=script_type)

    def add_edge(self, src: str, dst: str, edge_type: str, value: int = 0, height: int = 0):
        for key in (src, dst):
            if key not in self.graph:
                self.add_node(key)
        EdgeType(edge_type)
        self.graph.add_edge(src, dst, type=edge_type, value=value, height=height)

    @classmethod
    def from_edges(cls, edges: Iterable[Tuple[Any, ...]]) -> 'GraphStore':
        """Build a store from (src, dst, type[, value, height]) tuples."""
        store = cls()
        for edge in edges:
            store.add_edge(*edge)
        return store

    @classmethod
    def from_manifest(cls, manifest: Manifest) -> 'GraphStore':
        store = cls()
        for row in iter_unique_nodes(manifest):
            store.add_node(row.ref.key, row.props.get('script_type'))
        for edge in iter_edges(manifest):
            store.add_edge(edge.src.key, edge.dst.key, edge.type.value, edge.value, edge.height)
        logger.info(f"Loaded store: {store.graph.number_of_nodes()} nodes, {store.graph.number_of_edges()} edges")
        return store

    @classmethod
    def from_edge_file(cls, path: str) -> 'GraphStore':
        """Load a tab-separated edge list: src, dst, type[, value_sat, height].

        A header line starting with ':START_ID' and lines starting with '#' are skipped.
        """
        store = cls()
        with open_text(path, 'r') as f:
            for line_no, line in enumerate(f, start=1):
                line = line.rstrip('\n')
                if not line or line.startswith('#') or line.startswith(EDGE_COLUMNS[0]):
                    continue
                fields = line.split('\t')
                if len(fields) not in (3, 5):
                    raise ParseError(f"{path}:{line_no}: expected 3 or 5 fields, got {len(fields)}")
                src, dst = unescape_field(fields[0]), unescape_field(fields[1])
                value, height = (int(fields[3]), int(fields[4])) if len(fields) == 5 else (0, 0)
                store.add_edge(src, dst, fields[2], value, height)
        return store

    @classmethod
    def load(cls, source: str) -> 'GraphStore':
        """Load from a manifest (file or output directory) or an edge-list file."""
        if os.path.isdir(source) or os.path.basename(source) == 'manifest.json':
            return cls.from_manifest(Manifest.load(source))
        return cls.from_edge_file(source)

    def __contains__(self, key: str) -> bool:
        return key in self.graph

    def __len__(self) -> int:
        return self.graph.number_of_nodes()

    def require(self, key: str):
        if key not in self.graph:
            raise NotFoundError(f"Node {key} is not in the graph")

    def kind(self, key: str) -> str:
        return self.graph.nodes[key]['kind']

    def script_type(self, key: str) -> Optional[str]:
        return self.graph.nodes[key].get('script_type')

    def nodes(self) -> List[str]:
        return list(self.graph.nodes)

    def edge_data(self, edge_id: EdgeId) -> Dict[str, Any]:
        return self.graph.edges[edge_id]

    def incident(self, key: str, direction: str = 'both') -> Iterator[Tuple[EdgeId, str]]:
        """Edges touching ``key`` with the node at the other end, out-edges first.

        Args:
            key: Node key
            direction: 'out', 'in' or 'both'
        """
        if direction in ('both', 'out'):
            for src, dst, k in self.graph.out_edges(key, keys=True):
                yield (src, dst, k), dst
        if direction in ('both', 'in'):
            for src, dst, k in self.graph.in_edges(key, keys=True):
                # Self-loops were already reported as out-edges
                if direction == 'both' and src == dst:
                    continue
                yield (src, dst, k), src

    def distances_from(self, root: str, cutoff: Optional[int] = None) -> Dict[str, int]:
        """Undirected hop distances from ``root``."""
        return nx.single_source_shortest_path_length(self.graph.to_undirected(as_view=True), root, cutoff=cutoff)
