import os
from collections import Counter
from typing import List, Optional, Tuple
from graph_model import EDGE_TYPES, NODE_KINDS
from graph_store import GraphStore
from sampler import Subgraph
from script_address import SCRIPT_TYPES
from tsv_writer import format_row
from logger import setup_logger

logger = setup_logger(__name__)

SCHEMA_VERSION = 1
SCHEMA_LINE = f"# schema_version={SCHEMA_VERSION}\n"

NODE_FEATURES = (
    [f"is_{kind.value}" for kind in NODE_KINDS]
    + [f"script_{script_type.value}" for script_type in SCRIPT_TYPES]
    + ['in_degree', 'out_degree']
)
EDGE_FEATURES = [f"is_{edge_type.value}" for edge_type in EDGE_TYPES] + ['value_sat', 'height']


def sample_degrees(subgraph: Subgraph) -> Tuple[Counter, Counter]:
    """In- and out-degree of every node counted over the sampled edges."""
    return Counter(dst for _, dst, _ in subgraph.edges), Counter(src for src, _, _ in subgraph.edges)


def node_vector(key: str, subgraph: Subgraph, store: GraphStore, degrees: Optional[Tuple[Counter, Counter]] = None) -> List[int]:
    """[kind one-hot (4), script type one-hot (10), in-degree, out-degree] within the sample."""
    kind = store.kind(key)
    vector = [1 if kind == node_kind.value else 0 for node_kind in NODE_KINDS]
    script_type = store.script_type(key) if kind == 'Script' else None
    vector += [1 if script_type == st.value else 0 for st in SCRIPT_TYPES]
    in_degrees, out_degrees = degrees or sample_degrees(subgraph)
    return vector + [in_degrees[key], out_degrees[key]]


def edge_vector(edge_id, store: GraphStore) -> List[int]:
    """[edge type one-hot (6), value in satoshis, height]."""
    data = store.edge_data(edge_id)
    return [1 if data['type'] == edge_type.value else 0 for edge_type in EDGE_TYPES] + [data['value'], data['height']]


class LabelsFile:
    """Dataset-level subgraph ID -> label mapping, appended one line per sample."""

    def __init__(self, path: str):
        self.path = path
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, 'w', encoding='utf-8', newline='') as f:
            f.write(SCHEMA_LINE)
            f.write(format_row(['sample_id', 'root', 'method', 'label']))

    def append(self, sample_id: str, subgraph: Subgraph):
        with open(self.path, 'a', encoding='utf-8', newline='') as f:
            f.write(format_row([sample_id, subgraph.root, subgraph.method, subgraph.label]))


def encode_features(subgraph: Subgraph, store: GraphStore, out_dir: str, sample_id: str,
                    labels: Optional[LabelsFile] = None) -> str:
    """Write one sample's node vectors, edge vectors and label.

    Files are ``{out_dir}/{sample_id}/nodes.tsv``, ``edges.tsv`` and ``label.txt``;
    the label is also appended to ``labels`` when given.

    Returns:
        str: The sample directory
    """
    sample_dir = os.path.join(out_dir, sample_id)
    os.makedirs(sample_dir, exist_ok=True)

    with open(os.path.join(sample_dir, 'nodes.tsv'), 'w', encoding='utf-8', newline='') as f:
        f.write(SCHEMA_LINE)
        f.write(format_row(['node_key'] + NODE_FEATURES))
        degrees = sample_degrees(subgraph)
        for key in subgraph.nodes:
            f.write(format_row([key] + node_vector(key, subgraph, store, degrees)))

    with open(os.path.join(sample_dir, 'edges.tsv'), 'w', encoding='utf-8', newline='') as f:
        f.write(SCHEMA_LINE)
        f.write(format_row(['src', 'dst'] + EDGE_FEATURES))
        for edge_id in subgraph.edges:
            f.write(format_row([edge_id[0], edge_id[1]] + edge_vector(edge_id, store)))

    with open(os.path.join(sample_dir, 'label.txt'), 'w', encoding='utf-8', newline='') as f:
        f.write(SCHEMA_LINE)
        f.write(f"{subgraph.label}\n")

    if labels is not None:
        labels.append(sample_id, subgraph)
    logger.debug(f"Encoded sample {sample_id}: {len(subgraph.nodes)} nodes, {len(subgraph.edges)} edges")
    return sample_dir
