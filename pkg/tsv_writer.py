"""Batched TSV serialization of block graphs.

Output layout under ``out_dir``::

    manifest.json
    headers/<Label>.nodes.header.tsv, headers/<Type>.edges.header.tsv
    segments/b<batch>-<first height>/<Label>.nodes.tsv[.gz]
    segments/b<batch>-<first height>/<Type>.edges.tsv[.gz]
    dedup/<Label>.nodes.g<generation>.tsv[.gz], dedup/conflicts.tsv, dedup/ledger.sqlite

Batch k covers heights [k * batch_size, (k + 1) * batch_size). A batch is
written as one segment, or several when it was filled by incremental appends.
Every file starts with its bulk-import header line.
"""
import gzip
import hashlib
import io
import json
import os
import shutil
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, Iterator, List, Optional, Tuple
from urllib.parse import unquote
from error_handler import ConfigError, CorruptionError, ParseError, SequencingError
from graph_model import (
    EDGE_TYPES, NODE_KINDS, NODE_PROPERTIES, BlockGraph, EdgeRecord, EdgeType, NodeKind, NodeRef,
)
from logger import setup_logger

logger = setup_logger(__name__)

MANIFEST_VERSION = 1
MANIFEST_NAME = 'manifest.json'
EDGE_COLUMNS = (':START_ID', ':END_ID', ':TYPE', 'value_sat:long', 'height:long')


@dataclass(frozen=True)
class BatchLayout:
    out_dir: str = 'graph_out'
    batch_size: int = 1000
    compression: str = 'none'

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.compression not in ('none', 'gzip'):
            raise ConfigError(f"Unknown compression {self.compression!r}")

    def batch_of(self, height: int) -> int:
        return height // self.batch_size

    def batch_range(self, batch: int) -> Tuple[int, int]:
        """Inclusive height range of a batch."""
        return batch * self.batch_size, (batch + 1) * self.batch_size - 1

    @property
    def suffix(self) -> str:
        return '.tsv.gz' if self.compression == 'gzip' else '.tsv'

    @property
    def manifest_path(self) -> str:
        return os.path.join(self.out_dir, MANIFEST_NAME)


def node_header(kind: NodeKind) -> List[str]:
    """Bulk-import header columns for a node file."""
    props = [f"{name}:{type_hint}" for name, type_hint in NODE_PROPERTIES[kind]]
    return ['node_key:ID', ':LABEL'] + props + ['first_height:long']


def edge_header() -> List[str]:
    return list(EDGE_COLUMNS)


def escape_field(value: Any) -> str:
    """Render one TSV field; '%' and control characters are percent-encoded."""
    text = repr(value) if isinstance(value, float) else str(value)
    if not any(c == '%' or ord(c) < 32 or ord(c) == 127 for c in text):
        return text
    return ''.join(f"%{ord(c):02X}" if c == '%' or ord(c) < 32 or ord(c) == 127 else c for c in text)


def unescape_field(text: str) -> str:
    return unquote(text) if '%' in text else text


def format_row(fields: Iterable[Any]) -> str:
    return '\t'.join(escape_field(value) for value in fields) + '\n'


def node_row(ref: NodeRef, props: Dict[str, Any], first_height: int) -> List[Any]:
    return [ref.key, ref.kind.value] + [props.get(name, '') for name, _ in NODE_PROPERTIES[ref.kind]] + [first_height]


def edge_row(edge: EdgeRecord) -> List[Any]:
    return [edge.src.key, edge.dst.key, edge.type.value, edge.value, edge.height]


def open_text(path: str, mode: str):
    """Open a TSV file for text IO; '.gz' files are gzip with a fixed mtime."""
    if path.endswith('.gz'):
        if 'w' in mode:
            raw = open(path, 'wb')
            return io.TextIOWrapper(_OwningGzip(raw), encoding='utf-8', newline='')
        return io.TextIOWrapper(gzip.open(path, 'rb'), encoding='utf-8', newline='')
    return open(path, mode, encoding='utf-8', newline='')


class _OwningGzip(gzip.GzipFile):
    """GzipFile that closes its underlying file and writes mtime 0."""

    def __init__(self, raw):
        super().__init__(filename='', mode='wb', fileobj=raw, mtime=0)
        self._raw = raw

    def close(self):
        try:
            super().close()
        finally:
            self._raw.close()


def file_digest(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, 'rb') as f:
        for chunk in iter(lambda: f.read(1 << 20), b''):
            digest.update(chunk)
    return digest.hexdigest()


@dataclass
class FileEntry:
    path: str
    kind: str
    label: str
    rows: int
    sha256: str

    def to_dict(self) -> Dict[str, Any]:
        return {'path': self.path, 'kind': self.kind, 'label': self.label, 'rows': self.rows, 'sha256': self.sha256}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'FileEntry':
        return cls(data['path'], data['kind'], data['label'], int(data['rows']), data['sha256'])


@dataclass
class Segment:
    name: str
    batch: int
    min_height: int
    max_height: int
    files: List[FileEntry] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'name': self.name, 'batch': self.batch,
            'min_height': self.min_height, 'max_height': self.max_height,
            'files': [entry.to_dict() for entry in self.files],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'Segment':
        return cls(
            data['name'], int(data['batch']), int(data['min_height']), int(data['max_height']),
            [FileEntry.from_dict(entry) for entry in data['files']],
        )


@dataclass
class Manifest:
    """Index of everything written under an output directory."""
    out_dir: str
    batch_size: int
    compression: str
    segments: List[Segment] = field(default_factory=list)
    dedup: Dict[str, Any] = field(default_factory=lambda: {'segments_done': [], 'generations': []})
    tip_height_at_extraction: Optional[int] = None

    @property
    def layout(self) -> BatchLayout:
        return BatchLayout(self.out_dir, self.batch_size, self.compression)

    @property
    def min_height(self) -> Optional[int]:
        return min((seg.min_height for seg in self.segments), default=None)

    @property
    def max_height(self) -> Optional[int]:
        return max((seg.max_height for seg in self.segments), default=None)

    @property
    def path(self) -> str:
        return os.path.join(self.out_dir, MANIFEST_NAME)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'version': MANIFEST_VERSION,
            'batch_size': self.batch_size,
            'compression': self.compression,
            'min_height': self.min_height,
            'max_height': self.max_height,
            'tip_height_at_extraction': self.tip_height_at_extraction,
            'segments': [seg.to_dict() for seg in self.segments],
            'dedup': self.dedup,
        }

    def save(self) -> str:
        tmp_path = self.path + '.tmp'
        with open(tmp_path, 'w', encoding='utf-8') as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write('\n')
        os.replace(tmp_path, self.path)
        return self.path

    @classmethod
    def load(cls, path: str) -> 'Manifest':
        """Load a manifest from its file or from the directory containing it."""
        if os.path.isdir(path):
            path = os.path.join(path, MANIFEST_NAME)
        try:
            with open(path, 'r', encoding='utf-8') as f:
                data = json.load(f)
        except FileNotFoundError:
            raise ConfigError(f"No manifest at {path}")
        except json.JSONDecodeError as e:
            raise ParseError(f"Malformed manifest {path}: {e.msg}", offset=e.pos)
        if data.get('version') != MANIFEST_VERSION:
            raise ParseError(f"Unsupported manifest version {data.get('version')!r} in {path}")
        return cls(
            out_dir=os.path.dirname(os.path.abspath(path)),
            batch_size=int(data['batch_size']),
            compression=data['compression'],
            segments=[Segment.from_dict(seg) for seg in data['segments']],
            dedup=data.get('dedup') or {'segments_done': [], 'generations': []},
            tip_height_at_extraction=data.get('tip_height_at_extraction'),
        )

    def all_files(self) -> Iterator[FileEntry]:
        for seg in self.segments:
            yield from seg.files
        for generation in self.dedup.get('generations', []):
            for entry in generation['files']:
                yield FileEntry.from_dict(entry)

    def abspath(self, entry: FileEntry) -> str:
        return os.path.join(self.out_dir, entry.path)


def write_headers(layout: BatchLayout):
    """Write each file type's header line once under headers/."""
    header_dir = os.path.join(layout.out_dir, 'headers')
    os.makedirs(header_dir, exist_ok=True)
    for kind in NODE_KINDS:
        with open(os.path.join(header_dir, f"{kind.value}.nodes.header.tsv"), 'w', encoding='utf-8', newline='') as f:
            f.write(format_row(node_header(kind)))
    for edge_type in EDGE_TYPES:
        with open(os.path.join(header_dir, f"{edge_type.value}.edges.header.tsv"), 'w', encoding='utf-8', newline='') as f:
            f.write(format_row(edge_header()))


class SegmentWriter:
    """Writes one segment: one lazily-created file per node label and edge type."""

    def __init__(self, layout: BatchLayout, batch: int, first_height: int):
        self.layout = layout
        self.batch = batch
        self.min_height = first_height
        self.max_height = first_height
        self.name = f"b{batch:06d}-{first_height:09d}"
        self.rel_dir = os.path.join('segments', self.name)
        self.final_dir = os.path.join(layout.out_dir, self.rel_dir)
        self.tmp_dir = os.path.join(layout.out_dir, 'segments', f".tmp-{self.name}")
        if os.path.exists(self.tmp_dir):
            shutil.rmtree(self.tmp_dir)
        os.makedirs(self.tmp_dir)
        self.handles: Dict[Tuple[str, str], Any] = {}
        self.rows: Dict[Tuple[str, str], int] = {}

    def _handle(self, kind: str, label: str):
        key = (kind, label)
        handle = self.handles.get(key)
        if handle is None:
            path = os.path.join(self.tmp_dir, f"{label}.{kind}{self.layout.suffix}")
            handle = open_text(path, 'w')
            header = node_header(NodeKind(label)) if kind == 'nodes' else edge_header()
            handle.write(format_row(header))
            self.handles[key] = handle
            self.rows[key] = 0
        return handle

    def add(self, graph: BlockGraph):
        """Append one block's rows.

        Producers defined in other blocks get a stub row with empty
        properties, so every edge endpoint has a node row even when the
        producer lies below the first written height. Dedup keeps the real
        row whenever one exists.
        """
        self.max_height = graph.height
        for ref, props in graph.nodes.items():
            self._handle('nodes', ref.kind.value).write(format_row(node_row(ref, props, graph.height)))
            self.rows[('nodes', ref.kind.value)] += 1
        for ref in graph.external_refs:
            self._handle('nodes', ref.kind.value).write(format_row(node_row(ref, {}, graph.height)))
            self.rows[('nodes', ref.kind.value)] += 1
        for edge in graph.edges:
            self._handle('edges', edge.type.value).write(format_row(edge_row(edge)))
            self.rows[('edges', edge.type.value)] += 1

    def close(self) -> Segment:
        for handle in self.handles.values():
            handle.close()
        if os.path.exists(self.final_dir):
            shutil.rmtree(self.final_dir)
        os.replace(self.tmp_dir, self.final_dir)

        files = []
        for (kind, label) in sorted(self.handles):
            file_name = f"{label}.{kind}{self.layout.suffix}"
            files.append(FileEntry(
                path=os.path.join(self.rel_dir, file_name).replace(os.sep, '/'),
                kind=kind,
                label=label,
                rows=self.rows[(kind, label)],
                sha256=file_digest(os.path.join(self.final_dir, file_name)),
            ))
        return Segment(self.name, self.batch, self.min_height, self.max_height, files)

    def abort(self):
        for handle in self.handles.values():
            try:
                handle.close()
            except OSError:
                pass
        shutil.rmtree(self.tmp_dir, ignore_errors=True)


class BatchWriter:
    """Streams BlockGraphs in ascending height order into segments."""

    def __init__(self, manifest: Manifest, progress_every: int = 0):
        self.manifest = manifest
        self.layout = manifest.layout
        self.progress_every = progress_every
        self.current: Optional[SegmentWriter] = None
        self.last_height = manifest.max_height
        self.blocks_written = 0

    def add(self, graph: BlockGraph):
        if self.last_height is not None and graph.height <= self.last_height:
            raise SequencingError(f"Block {graph.height} arrived after block {self.last_height}")
        batch = self.layout.batch_of(graph.height)
        if self.current is not None and self.current.batch != batch:
            self._finish_segment()
        if self.current is None:
            self.current = SegmentWriter(self.layout, batch, graph.height)
        self.current.add(graph)
        self.last_height = graph.height
        self.blocks_written += 1
        if self.progress_every and self.blocks_written % self.progress_every == 0:
            logger.info(f"Serialized {self.blocks_written} blocks (height {graph.height})")

    def _finish_segment(self):
        segment = self.current.close()
        self.current = None
        self.manifest.segments.append(segment)
        rows = sum(entry.rows for entry in segment.files)
        logger.info(f"Wrote segment {segment.name}: heights {segment.min_height}..{segment.max_height}, {rows} rows")

    def close(self) -> Manifest:
        if self.current is not None:
            self._finish_segment()
        return self.manifest

    def abort(self):
        if self.current is not None:
            logger.warning(f"Removing partial segment {self.current.name}")
            self.current.abort()
            self.current = None


def _reset_output(out_dir: str):
    for name in ('segments', 'dedup', 'headers'):
        path = os.path.join(out_dir, name)
        if os.path.isdir(path):
            shutil.rmtree(path)
    for name in (MANIFEST_NAME, MANIFEST_NAME + '.tmp'):
        path = os.path.join(out_dir, name)
        if os.path.exists(path):
            os.remove(path)


def write_batches(graphs: Iterable[BlockGraph], layout: BatchLayout,
                  tip_height: Optional[int] = None, progress_every: int = 0) -> Manifest:
    """Serialize an ascending stream of block graphs into a fresh output directory.

    Args:
        graphs: Block graphs in strictly ascending height order
        layout: Output directory, batch size and compression
        tip_height: Chain tip at extraction time, recorded in the manifest
        progress_every: Log a progress line every this many blocks (0 disables)

    Returns:
        Manifest: Saved manifest listing every written file

    Raises:
        SequencingError: Heights not strictly ascending
    """
    os.makedirs(layout.out_dir, exist_ok=True)
    _reset_output(layout.out_dir)
    write_headers(layout)

    manifest = Manifest(
        out_dir=os.path.abspath(layout.out_dir),
        batch_size=layout.batch_size,
        compression=layout.compression,
        tip_height_at_extraction=tip_height,
    )
    writer = BatchWriter(manifest, progress_every=progress_every)
    try:
        for graph in graphs:
            writer.add(graph)
    except BaseException:
        writer.abort()
        raise
    writer.close()
    manifest.save()
    return manifest


def append_incremental(manifest: Manifest, graphs: Iterable[BlockGraph], progress_every: int = 0,
                       memory_budget_bytes: int = 256 * 1024 * 1024) -> Manifest:
    """Extend an existing output with blocks starting at max_height + 1.

    New segments are written, then node deduplication runs over them so node
    IDs already emitted are not emitted again.

    Raises:
        SequencingError: The stream does not start right after the manifest's last height
    """
    from node_dedup import dedup_nodes

    iterator = iter(graphs)
    first = next(iterator, None)
    if first is None:
        logger.info("Nothing to append; manifest unchanged")
        return manifest

    expected = 0 if manifest.max_height is None else manifest.max_height + 1
    if first.height != expected:
        kind = 'overlap' if first.height < expected else 'gap'
        raise SequencingError(f"Append {kind}: stream starts at {first.height}, expected {expected}")

    writer = BatchWriter(manifest, progress_every=progress_every)
    try:
        writer.add(first)
        for graph in iterator:
            writer.add(graph)
    except BaseException:
        writer.abort()
        raise
    writer.close()
    manifest.save()
    return dedup_nodes(manifest, memory_budget_bytes)


def _parse_value(text: str, type_hint: str) -> Any:
    text = unescape_field(text)
    if type_hint == 'long':
        return int(text) if text != '' else None
    if type_hint == 'double':
        return float(text) if text != '' else None
    return text


def verify_file(manifest: Manifest, entry: FileEntry) -> str:
    """Check a file against its manifest digest and return its absolute path.

    Raises:
        CorruptionError: Missing file or digest mismatch
    """
    path = manifest.abspath(entry)
    if not os.path.exists(path):
        raise CorruptionError(f"Missing file {entry.path}")
    actual = file_digest(path)
    if actual != entry.sha256:
        raise CorruptionError(f"Digest mismatch for {entry.path}: manifest {entry.sha256[:12]}, file {actual[:12]}")
    return path


@dataclass
class NodeRow:
    ref: NodeRef
    props: Dict[str, Any]
    first_height: int


def read_node_file(path: str, kind: NodeKind) -> Iterator[NodeRow]:
    names = NODE_PROPERTIES[kind]
    with open_text(path, 'r') as f:
        header = f.readline().rstrip('\n').split('\t')
        if header != node_header(kind):
            raise ParseError(f"Unexpected header in {path}: {header}")
        for line_no, line in enumerate(f, start=2):
            fields = line.rstrip('\n').split('\t')
            if len(fields) != len(header):
                raise CorruptionError(f"{path}:{line_no}: expected {len(header)} fields, got {len(fields)}")
            props = {name: _parse_value(text, hint) for (name, hint), text in zip(names, fields[2:-1])}
            yield NodeRow(NodeRef.from_key(unescape_field(fields[0])), props, int(fields[-1]))


def read_edge_file(path: str) -> Iterator[EdgeRecord]:
    with open_text(path, 'r') as f:
        header = f.readline().rstrip('\n').split('\t')
        if header != edge_header():
            raise ParseError(f"Unexpected header in {path}: {header}")
        for line_no, line in enumerate(f, start=2):
            fields = line.rstrip('\n').split('\t')
            if len(fields) != len(EDGE_COLUMNS):
                raise CorruptionError(f"{path}:{line_no}: expected {len(EDGE_COLUMNS)} fields, got {len(fields)}")
            yield EdgeRecord(
                src=NodeRef.from_key(unescape_field(fields[0])),
                dst=NodeRef.from_key(unescape_field(fields[1])),
                type=EdgeType(fields[2]),
                value=int(fields[3]),
                height=int(fields[4]),
            )


def read_batches(manifest: Manifest) -> Iterator[Tuple[List[NodeRow], List[EdgeRecord]]]:
    """Yield (node rows, edges) per segment in height order, verifying digests first.

    Raises:
        CorruptionError: A file is missing, truncated or altered
    """
    for segment in sorted(manifest.segments, key=lambda seg: seg.min_height):
        nodes: List[NodeRow] = []
        edges: List[EdgeRecord] = []
        for entry in segment.files:
            path = verify_file(manifest, entry)
            if entry.kind == 'nodes':
                nodes.extend(read_node_file(path, NodeKind(entry.label)))
            else:
                edges.extend(read_edge_file(path))
        yield nodes, edges


def iter_edges(manifest: Manifest) -> Iterator[EdgeRecord]:
    """All edges of all segments, digest-checked, without buffering a segment."""
    for segment in sorted(manifest.segments, key=lambda seg: seg.min_height):
        for entry in segment.files:
            if entry.kind == 'edges':
                yield from read_edge_file(verify_file(manifest, entry))


def iter_unique_nodes(manifest: Manifest) -> Iterator[NodeRow]:
    """Deduplicated node rows; raw segment rows when dedup has not run yet."""
    generations = manifest.dedup.get('generations', [])
    if not generations:
        seen = set()
        for nodes, _ in read_batches(manifest):
            for row in nodes:
                if row.ref not in seen:
                    seen.add(row.ref)
                    yield row
        return
    for generation in generations:
        for data in generation['files']:
            entry = FileEntry.from_dict(data)
            yield from read_node_file(verify_file(manifest, entry), NodeKind(entry.label))
