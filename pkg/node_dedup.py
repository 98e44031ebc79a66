import heapq
import os
import tempfile
from itertools import groupby
from typing import Iterator, List, Optional, TextIO, Tuple
from graph_model import NODE_KINDS, NodeKind
from seen_index import SeenIndex
from tsv_writer import FileEntry, Manifest, file_digest, format_row, node_header, open_text, verify_file
from logger import setup_logger

logger = setup_logger(__name__)

# Per-row bookkeeping beyond the raw line (tuple, ints, list slot, key copy)
ROW_OVERHEAD_BYTES = 200
LEDGER_BATCH = 10000
CONFLICT_COLUMNS = ['node_key', 'label', 'kept_height', 'other_height', 'kept_properties', 'other_properties']

# (node key, first height, raw line)
SortRow = Tuple[str, int, str]


def _sort_key(row: SortRow) -> Tuple[str, int]:
    return row[0], row[1]


def _split_line(line: str) -> SortRow:
    key = line.split('\t', 1)[0]
    height = int(line.rstrip('\n').rsplit('\t', 1)[1])
    return key, height, line


def _properties_text(line: str) -> str:
    """Property columns of a raw node line (between label and first_height)."""
    fields = line.rstrip('\n').split('\t')
    return '\t'.join(fields[2:-1])


def _is_stub(props: str) -> bool:
    """Stub rows (producers referenced from another block) carry no properties."""
    return not props.strip('\t')


def external_sort(lines: Iterator[str], memory_budget_bytes: int, tmp_dir: str) -> Iterator[SortRow]:
    """Sort node lines by (key, height) with bounded memory.

    Sorted runs of at most half the budget are spilled to temporary files
    and merged lazily.

    Args:
        lines: Raw node lines (header excluded)
        memory_budget_bytes: Budget for the in-memory run
        tmp_dir: Directory for spill files

    Yields:
        SortRow: Rows in ascending (key, height) order
    """
    chunk_limit = max(memory_budget_bytes // 2, 1 << 16)
    runs: List[TextIO] = []
    chunk: List[SortRow] = []
    chunk_bytes = 0

    def spill():
        chunk.sort(key=_sort_key)
        run = tempfile.TemporaryFile(mode='w+', encoding='utf-8', newline='', dir=tmp_dir)
        run.writelines(row[2] for row in chunk)
        run.seek(0)
        runs.append(run)
        chunk.clear()

    try:
        for line in lines:
            chunk.append(_split_line(line))
            chunk_bytes += 2 * len(line) + ROW_OVERHEAD_BYTES
            if chunk_bytes >= chunk_limit:
                spill()
                chunk_bytes = 0

        if not runs:
            chunk.sort(key=_sort_key)
            yield from chunk
            return

        if chunk:
            spill()
        logger.debug(f"External sort merging {len(runs)} runs")
        yield from heapq.merge(*((_split_line(line) for line in run) for run in runs), key=_sort_key)
    finally:
        for run in runs:
            run.close()


def _segment_lines(manifest: Manifest, segment_names: List[str], label: str) -> Iterator[str]:
    for segment in manifest.segments:
        if segment.name not in segment_names:
            continue
        for entry in segment.files:
            if entry.kind != 'nodes' or entry.label != label:
                continue
            with open_text(verify_file(manifest, entry), 'r') as f:
                f.readline()
                yield from f


class _ConflictLog:
    def __init__(self, path: str):
        self.path = path
        self.handle: Optional[TextIO] = None
        self.count = 0

    def add(self, key: str, label: str, kept_height: int, other_height: int, kept: str, other: str):
        if self.handle is None:
            fresh = not os.path.exists(self.path)
            self.handle = open(self.path, 'a', encoding='utf-8', newline='')
            if fresh:
                self.handle.write(format_row(CONFLICT_COLUMNS))
        # Property columns are already escaped; swap their tabs so they stay one field
        self.handle.write('\t'.join([key, label, str(kept_height), str(other_height),
                                     kept.replace('\t', '|'), other.replace('\t', '|')]) + '\n')
        self.count += 1

    def close(self):
        if self.handle is not None:
            self.handle.close()


def dedup_nodes(manifest: Manifest, memory_budget_bytes: int = 256 * 1024 * 1024) -> Manifest:
    """Emit each node ID once, keeping its first-seen (lowest height) row.

    Only segments not deduplicated before are processed; IDs recorded in the
    on-disk ledger by earlier runs are not emitted again. Running it twice
    therefore changes nothing. Rows sharing an ID but differing in properties
    go to dedup/conflicts.tsv.

    Args:
        manifest: Manifest of the output directory
        memory_budget_bytes: Bound on in-memory sort runs

    Returns:
        Manifest: Saved manifest with a new dedup generation (if any work was done)
    """
    done = set(manifest.dedup.get('segments_done', []))
    pending = [seg.name for seg in sorted(manifest.segments, key=lambda seg: seg.min_height) if seg.name not in done]
    if not pending:
        logger.info("All segments already deduplicated")
        return manifest

    dedup_dir = os.path.join(manifest.out_dir, 'dedup')
    os.makedirs(dedup_dir, exist_ok=True)
    generations = manifest.dedup.setdefault('generations', [])
    generation = len(generations)
    suffix = manifest.layout.suffix

    conflicts = _ConflictLog(os.path.join(dedup_dir, 'conflicts.tsv'))
    files: List[FileEntry] = []
    totals = {'in': 0, 'out': 0}

    with SeenIndex(os.path.join(dedup_dir, 'ledger.sqlite'), compact_every=0) as ledger:
        try:
            for kind in NODE_KINDS:
                entry = _dedup_label(manifest, pending, kind, generation, suffix, memory_budget_bytes,
                                     ledger, conflicts, totals)
                if entry is not None:
                    files.append(entry)
        finally:
            conflicts.close()

    generations.append({
        'generation': generation,
        'segments': pending,
        'files': [entry.to_dict() for entry in files],
        'conflicts': conflicts.count,
    })
    manifest.dedup['segments_done'] = sorted(done | set(pending))
    manifest.dedup['ledger'] = 'dedup/ledger.sqlite'
    manifest.save()

    logger.info(
        f"Dedup generation {generation}: {totals['in']} node rows in, {totals['out']} unique out, "
        f"{conflicts.count} conflict(s)"
    )
    return manifest


def _dedup_label(manifest: Manifest, pending: List[str], kind: NodeKind, generation: int, suffix: str,
                 memory_budget_bytes: int, ledger: SeenIndex, conflicts: _ConflictLog,
                 totals: dict) -> Optional[FileEntry]:
    label = kind.value
    rel_path = f"dedup/{label}.nodes.g{generation}{suffix}"
    path = os.path.join(manifest.out_dir, rel_path)
    tmp_dir = os.path.join(manifest.out_dir, 'dedup')

    rows_in = 0
    rows_out = 0
    handle = None
    batch: List[Tuple[str, int, str, str]] = []

    def flush():
        nonlocal handle, rows_out
        existing = ledger.register_rows((key, height, props) for key, height, props, _ in batch)
        for (key, height, props, line), stored in zip(batch, existing):
            if stored is not None:
                kept_height, kept_props = stored
                if kept_props is not None and kept_props != props and not _is_stub(props):
                    conflicts.add(key, label, kept_height, height, kept_props, props)
                continue
            if handle is None:
                handle = open_text(path, 'w')
                handle.write(format_row(node_header(kind)))
            handle.write(line)
            rows_out += 1
        batch.clear()

    try:
        sorted_rows = external_sort(_segment_lines(manifest, pending, label), memory_budget_bytes, tmp_dir)
        for key, group in groupby(sorted_rows, key=lambda row: row[0]):
            _, first_height, first_line = next(group)
            first_props = _properties_text(first_line)
            rows_in += 1
            for _, height, line in group:
                rows_in += 1
                props = _properties_text(line)
                if props != first_props and not _is_stub(props):
                    conflicts.add(key, label, first_height, height, first_props, props)
            batch.append((key, first_height, first_props, first_line))
            if len(batch) >= LEDGER_BATCH:
                flush()
        if batch:
            flush()
    finally:
        if handle is not None:
            handle.close()

    totals['in'] += rows_in
    totals['out'] += rows_out
    if handle is None:
        return None
    return FileEntry(path=rel_path, kind='nodes', label=label, rows=rows_out, sha256=file_digest(path))
