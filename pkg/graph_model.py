from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, Iterator, List, Optional, Tuple
from error_handler import InvariantViolationError, ParseError


class NodeKind(str, Enum):
    COINBASE = 'Coinbase'
    SCRIPT = 'Script'
    TX = 'Tx'
    BLOCK = 'Block'


class EdgeType(str, Enum):
    MINTS = 'Mints'
    TRANSFERS = 'Transfers'
    FEE = 'Fee'
    REDEEMS = 'Redeems'
    CONFIRMS = 'Confirms'
    CREDITS = 'Credits'


NODE_KINDS = tuple(NodeKind)
EDGE_TYPES = tuple(EdgeType)

PERMITTED_PATTERNS = frozenset({
    (NodeKind.COINBASE, EdgeType.MINTS, NodeKind.SCRIPT),
    (NodeKind.COINBASE, EdgeType.MINTS, NodeKind.TX),
    (NodeKind.SCRIPT, EdgeType.TRANSFERS, NodeKind.SCRIPT),
    (NodeKind.TX, EdgeType.TRANSFERS, NodeKind.TX),
    (NodeKind.SCRIPT, EdgeType.FEE, NodeKind.SCRIPT),
    (NodeKind.TX, EdgeType.FEE, NodeKind.TX),
    (NodeKind.SCRIPT, EdgeType.REDEEMS, NodeKind.BLOCK),
    (NodeKind.TX, EdgeType.REDEEMS, NodeKind.BLOCK),
    (NodeKind.BLOCK, EdgeType.CREDITS, NodeKind.SCRIPT),
    (NodeKind.BLOCK, EdgeType.CONFIRMS, NodeKind.TX),
})

# Node properties per kind, in serialization order, with import type hints
NODE_PROPERTIES: Dict[NodeKind, Tuple[Tuple[str, str], ...]] = {
    NodeKind.COINBASE: (),
    NodeKind.SCRIPT: (('script_id', 'string'), ('script_type', 'string')),
    NodeKind.TX: (
        ('txid', 'string'), ('size', 'long'), ('vsize', 'long'), ('weight', 'long'),
        ('version', 'string'), ('lock_time', 'long'),
    ),
    NodeKind.BLOCK: (
        ('height', 'long'), ('median_time', 'long'), ('difficulty', 'double'), ('n_tx', 'long'),
        ('size', 'long'), ('stripped_size', 'long'), ('weight', 'long'),
    ),
}


@dataclass(frozen=True)
class NodeRef:
    """Node identity: Coinbase singleton, Block by height, Tx by txid, Script by ScriptId."""
    kind: NodeKind
    ident: str = ''

    @classmethod
    def coinbase(cls) -> 'NodeRef':
        return cls(NodeKind.COINBASE)

    @classmethod
    def block(cls, height: int) -> 'NodeRef':
        return cls(NodeKind.BLOCK, str(height))

    @classmethod
    def tx(cls, txid: str) -> 'NodeRef':
        return cls(NodeKind.TX, txid)

    @classmethod
    def script(cls, script_id) -> 'NodeRef':
        return cls(NodeKind.SCRIPT, str(script_id))

    @property
    def key(self) -> str:
        """Globally unique serialized ID."""
        if self.kind == NodeKind.COINBASE:
            return 'coinbase'
        return f"{self.kind.value.lower()}:{self.ident}"

    @classmethod
    def from_key(cls, key: str) -> 'NodeRef':
        if key == 'coinbase':
            return cls.coinbase()
        prefix, sep, ident = key.partition(':')
        kinds = {'block': NodeKind.BLOCK, 'tx': NodeKind.TX, 'script': NodeKind.SCRIPT}
        if not sep or prefix not in kinds or not ident:
            raise ParseError(f"Not a node key: {key!r}")
        return cls(kinds[prefix], ident)

    def __str__(self) -> str:
        return self.key


@dataclass(frozen=True)
class EdgeRecord:
    src: NodeRef
    dst: NodeRef
    type: EdgeType
    value: int
    height: int


def check_pattern(edge: EdgeRecord) -> bool:
    """True iff (src kind, type, dst kind) is one of the ten schema patterns."""
    return (edge.src.kind, edge.type, edge.dst.kind) in PERMITTED_PATTERNS


@dataclass
class BlockGraph:
    """Nodes and edges contributed by one block.

    ``nodes`` holds nodes the block defines, with properties. Tx nodes that
    only appear as producers of spent outputs from earlier blocks are kept
    in ``external_refs``. ``edges`` is a multiset: parallel edges stay separate.
    """
    height: int
    nodes: Dict[NodeRef, Dict[str, Any]] = field(default_factory=dict)
    edges: List[EdgeRecord] = field(default_factory=list)
    external_refs: Dict[NodeRef, None] = field(default_factory=dict)

    def add_node(self, ref: NodeRef, properties: Optional[Dict[str, Any]] = None):
        """Add or replace a node; the last write wins on properties."""
        self.nodes[ref] = dict(properties or {})
        self.external_refs.pop(ref, None)

    def add_external(self, ref: NodeRef):
        if ref not in self.nodes:
            self.external_refs[ref] = None

    def add_edge(self, edge: EdgeRecord):
        if not check_pattern(edge):
            raise InvariantViolationError(
                f"Edge pattern {edge.src.kind.value}-{edge.type.value}->{edge.dst.kind.value} "
                f"not permitted (block {self.height})"
            )
        if edge.value < 0:
            raise InvariantViolationError(f"Negative edge value {edge.value} on {edge.type.value} at block {self.height}")
        if edge.height != self.height:
            raise InvariantViolationError(f"Edge height {edge.height} inside block graph {self.height}")
        self.edges.append(edge)

    def nodes_of(self, kind: NodeKind) -> Iterator[Tuple[NodeRef, Dict[str, Any]]]:
        return ((ref, props) for ref, props in self.nodes.items() if ref.kind == kind)

    def edges_of(self, edge_type: EdgeType) -> List[EdgeRecord]:
        return [edge for edge in self.edges if edge.type == edge_type]

    def dangling_endpoints(self) -> List[NodeRef]:
        """Edge endpoints that are neither defined nor externally referenced."""
        known = set(self.nodes) | set(self.external_refs)
        missing = {}
        for edge in self.edges:
            for ref in (edge.src, edge.dst):
                if ref not in known:
                    missing[ref] = None
        return list(missing)
