import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple, Union
import numpy as np
from error_handler import ConfigError
from graph_model import NodeKind
from graph_store import GraphStore
from tsv_writer import Manifest, iter_edges, iter_unique_nodes
from logger import setup_logger

logger = setup_logger(__name__)

BIN_WIDTH = 10
DIRECTIONS = ('in', 'out', 'total')
ENTROPY_MODES = ('distinct_values', 'per_node')
DEGREE_CLASSES = (NodeKind.BLOCK, NodeKind.TX, NodeKind.SCRIPT)


@dataclass
class DirectionStats:
    mean: float
    std: float
    distinct: int
    entropy: float
    max_entropy: float
    normalized_entropy: float


@dataclass
class DegreeSummary:
    """Degree distribution of one node class over all edge types."""
    node_class: str
    n_nodes: int
    n_edges: int
    density: Optional[float]
    entropy_mode: str
    directions: Dict[str, DirectionStats] = field(default_factory=dict)
    # (in-degree bin, out-degree bin) -> node count
    histogram: Dict[Tuple[int, int], int] = field(default_factory=dict)
    marginals: Dict[str, List[Tuple[int, int, int]]] = field(default_factory=dict)

    def to_dict(self) -> Dict:
        return {
            'node_class': self.node_class,
            'N': self.n_nodes,
            'E': self.n_edges,
            'density': self.density,
            'entropy_mode': self.entropy_mode,
            'directions': {name: vars(stats) for name, stats in self.directions.items()},
        }


def density(n_nodes: int, n_edges: int) -> Optional[float]:
    """E / (N (N - 1)); None when N < 2."""
    if n_nodes < 2:
        return None
    return n_edges / (n_nodes * (n_nodes - 1))


def degree_entropy(degrees: Sequence[int], mode: str = 'distinct_values') -> Tuple[float, float, float, int]:
    """Shannon entropy of a degree sequence.

    In 'distinct_values' mode the probabilities are the frequencies of the distinct
    degree values and the maximum is ln(M) for M distinct values. In
    'per_node' mode every node carries probability degree / sum(degrees) and
    the maximum is ln(N).

    Returns:
        (H, H_max, H_n, M)
    """
    if mode not in ENTROPY_MODES:
        raise ConfigError(f"Unknown entropy mode {mode!r}")
    distinct = len(set(degrees))
    if mode == 'distinct_values':
        counts = np.fromiter(Counter(degrees).values(), dtype=np.float64)
        support = distinct
    else:
        counts = np.asarray([d for d in degrees if d > 0], dtype=np.float64)
        support = len(degrees)

    total = counts.sum() if counts.size else 0.0
    if total <= 0 or support <= 1:
        return 0.0, math.log(support) if support > 1 else 0.0, 0.0, distinct

    p = counts / total
    entropy = float(-(p * np.log(p)).sum())
    max_entropy = math.log(support)
    # Clamp float noise at the upper bound
    normalized = min(max(entropy / max_entropy, 0.0), 1.0)
    return entropy, max_entropy, normalized, distinct


def degree_bin(degree: int) -> int:
    """Lower bound of the width-10 bin holding ``degree``."""
    return (degree // BIN_WIDTH) * BIN_WIDTH


def binned(degrees: Sequence[int]) -> List[Tuple[int, int, int]]:
    """Dense (bin lower bound, count, support) rows from bin 0 to the highest populated bin."""
    if not degrees:
        return []
    counts = Counter(degree_bin(d) for d in degrees)
    return [(lower, counts.get(lower, 0), int(lower in counts))
            for lower in range(0, max(counts) + BIN_WIDTH, BIN_WIDTH)]


def _class_degrees_from_manifest(manifest: Manifest, kind: NodeKind) -> Tuple[Dict[str, List[int]], int]:
    degrees: Dict[str, List[int]] = {}
    for row in iter_unique_nodes(manifest):
        if row.ref.kind == kind:
            degrees[row.ref.key] = [0, 0]

    n_edges = 0
    for edge in iter_edges(manifest):
        touched = False
        if edge.src.kind == kind:
            degrees.setdefault(edge.src.key, [0, 0])[1] += 1
            touched = True
        if edge.dst.kind == kind:
            degrees.setdefault(edge.dst.key, [0, 0])[0] += 1
            touched = True
        n_edges += touched
    return degrees, n_edges


def _class_degrees_from_store(store: GraphStore, kind: NodeKind) -> Tuple[Dict[str, List[int]], int]:
    graph = store.graph
    degrees = {
        key: [graph.in_degree(key), graph.out_degree(key)]
        for key, data in graph.nodes(data=True) if data['kind'] == kind.value
    }
    n_edges = sum(
        1 for src, dst in graph.edges()
        if graph.nodes[src]['kind'] == kind.value or graph.nodes[dst]['kind'] == kind.value
    )
    return degrees, n_edges


def _direction_stats(values: Sequence[int], mode: str) -> DirectionStats:
    arr = np.asarray(values, dtype=np.float64)
    entropy, max_entropy, normalized, distinct = degree_entropy(list(values), mode)
    return DirectionStats(
        mean=float(arr.mean()) if arr.size else 0.0,
        std=float(arr.std()) if arr.size else 0.0,
        distinct=distinct,
        entropy=entropy,
        max_entropy=max_entropy,
        normalized_entropy=normalized,
    )


def degree_summary(source: Union[Manifest, GraphStore], node_class: Union[str, NodeKind],
                   entropy_mode: str = 'distinct_values') -> DegreeSummary:
    """In/out/total degree distribution of Block, Tx or Script nodes.

    N counts every node of the class (isolated ones included); E counts edges
    with at least one endpoint in the class.

    Args:
        source: Serialized graph or a loaded store
        node_class: 'Block', 'Tx' or 'Script'
        entropy_mode: 'distinct_values' or 'per_node'
    """
    kind = NodeKind(node_class)
    if kind not in DEGREE_CLASSES:
        raise ConfigError(f"Degree summaries cover Block, Tx and Script nodes, not {kind.value}")

    if isinstance(source, GraphStore):
        degrees, n_edges = _class_degrees_from_store(source, kind)
    else:
        degrees, n_edges = _class_degrees_from_manifest(source, kind)

    in_degrees = [d[0] for d in degrees.values()]
    out_degrees = [d[1] for d in degrees.values()]
    totals = [i + o for i, o in zip(in_degrees, out_degrees)]

    summary = DegreeSummary(
        node_class=kind.value,
        n_nodes=len(degrees),
        n_edges=n_edges,
        density=density(len(degrees), n_edges),
        entropy_mode=entropy_mode,
    )
    for name, values in zip(DIRECTIONS, (in_degrees, out_degrees, totals)):
        summary.directions[name] = _direction_stats(values, entropy_mode)
        summary.marginals[name] = binned(values)
    summary.histogram = dict(sorted(Counter(
        (degree_bin(i), degree_bin(o)) for i, o in zip(in_degrees, out_degrees)
    ).items()))

    logger.info(f"{kind.value}: N={summary.n_nodes} E={summary.n_edges} D={summary.density}")
    return summary


def rolling_mean(series: Sequence[float], window: int = 5000) -> List[float]:
    """Trailing-window mean; the first window - 1 entries average the available prefix."""
    if window < 1:
        raise ValueError(f"Rolling window must be >= 1, got {window}")
    values = np.asarray(series, dtype=np.float64)
    if values.size == 0:
        return []
    cumsum = np.concatenate(([0.0], np.cumsum(values)))
    ends = np.arange(1, values.size + 1)
    starts = np.maximum(ends - window, 0)
    return ((cumsum[ends] - cumsum[starts]) / (ends - starts)).tolist()


def pearson(x: Sequence[float], y: Sequence[float]) -> Optional[float]:
    """Pearson correlation; None for fewer than two points or a constant series."""
    if len(x) != len(y):
        raise ValueError(f"Series lengths differ: {len(x)} vs {len(y)}")
    if len(x) < 2:
        return None
    a = np.asarray(x, dtype=np.float64)
    b = np.asarray(y, dtype=np.float64)
    if a.std() == 0 or b.std() == 0:
        return None
    return float(np.corrcoef(a, b)[0, 1])


def lag_pearson(series: Sequence[Optional[float]], lag: int = 1) -> Optional[float]:
    """Correlation of a series with itself shifted by ``lag``, over pairs without gaps."""
    pairs = [(a, b) for a, b in zip(series[:-lag], series[lag:]) if a is not None and b is not None]
    if not pairs:
        return None
    first, second = zip(*pairs)
    return pearson(first, second)


def histogram_rows(summary: DegreeSummary) -> Iterator[List[int]]:
    """(in bin, out bin, count, support) rows of the populated bivariate bins."""
    for (in_bin, out_bin), count in summary.histogram.items():
        yield [in_bin, out_bin, count, 1]


def summaries(source: Union[Manifest, GraphStore], classes: Iterable[str], entropy_mode: str) -> List[DegreeSummary]:
    return [degree_summary(source, node_class, entropy_mode) for node_class in classes]
