import json
import os
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from typing import Any, Dict, Iterable, Iterator, List, Optional
from block_parser import BlockRecord
from block_profiler import STATS_COLUMNS, BlockProfiler, BlockStats, median_time_past, residual_scan, script_type_share
from block_source import BlockSource, iter_blocks
from config import RunConfig
from degree_stats import DEGREE_CLASSES, DIRECTIONS, degree_summary, histogram_rows, lag_pearson, pearson, rolling_mean
from error_handler import BlockGraphError, ConfigError, error_handler
from feature_encoder import LabelsFile, encode_features
from graph_builder import build_block_graph, build_many
from graph_model import BlockGraph
from graph_store import GraphStore
from node_dedup import dedup_nodes
from sampler import choose_roots, sample
from script_address import SCRIPT_TYPES
from tsv_writer import Manifest, append_incremental, format_row, write_batches
from logger import setup_logger

logger = setup_logger(__name__)

# Blocks handed to one worker task
BUILD_CHUNK = 64
ROLLING_SERIES = ('tx_count', 'addr_total', 'addr_new', 'txout_value_sum')
CORRELATION_PAIRS = (
    ('txin_count_sum', 'txout_count_sum'),
    ('tx_count', 'addr_total'),
    ('tx_count', 'addr_unique'),
    ('tx_count', 'addr_new'),
)


def build_graphs(blocks: Iterable[BlockRecord], run_config: RunConfig) -> Iterator[BlockGraph]:
    """Turn a height-ordered block stream into block graphs, keeping the order.

    With more than one worker, chunks of blocks are built in a process pool
    with at most two chunks per worker in flight.
    """
    cfg = run_config.value_split
    network = run_config.network
    if run_config.workers <= 1:
        for block in blocks:
            yield build_block_graph(block, cfg, network)
        return

    def chunks() -> Iterator[List[BlockRecord]]:
        chunk: List[BlockRecord] = []
        for block in blocks:
            chunk.append(block)
            if len(chunk) >= BUILD_CHUNK:
                yield chunk
                chunk = []
        if chunk:
            yield chunk

    with ProcessPoolExecutor(max_workers=run_config.workers) as pool:
        pending = deque()
        for chunk in chunks():
            pending.append(pool.submit(build_many, chunk, cfg, network))
            if len(pending) >= 2 * run_config.workers:
                yield from pending.popleft().result()
        while pending:
            yield from pending.popleft().result()


def _cells(row: Iterable[Any]) -> List[Any]:
    return ['' if value is None else value for value in row]


def _write_json(path: str, data: Dict[str, Any]):
    with open(path, 'w', encoding='utf-8', newline='') as f:
        json.dump(data, f, indent=2, sort_keys=True)
        f.write('\n')


class Pipeline:
    """Runs the build, append, sample and profile commands for one RunConfig."""

    def __init__(self, run_config: RunConfig):
        self.run_config = run_config

    def _source(self) -> BlockSource:
        problems = self.run_config.source_problems()
        if problems:
            raise ConfigError('; '.join(problems))
        return BlockSource.from_run_config(self.run_config)

    def build(self) -> str:
        """Ingest, build and serialize the configured height range into a fresh output.

        Returns:
            str: Path of the written manifest
        """
        rc = self.run_config
        logger.info(f"Building heights {rc.height_from}..{rc.height_to} into {rc.layout.out_dir}")
        source = self._source()
        try:
            tip = source.tip_height()
            blocks = iter_blocks(rc.height_from, rc.height_to, source)
            manifest = write_batches(build_graphs(blocks, rc), rc.layout, tip, rc.progress_every)
        finally:
            source.close()
        manifest = dedup_nodes(manifest, rc.memory_budget_bytes)
        logger.info(f"Build finished: {len(manifest.segments)} segment(s), heights {manifest.min_height}..{manifest.max_height}")
        return manifest.path

    def append(self, height_from: Optional[int] = None) -> str:
        """Extend an existing output up to HEIGHT_TO.

        Args:
            height_from: First height to add; defaults to the manifest's last height + 1
        """
        rc = self.run_config
        manifest = Manifest.load(rc.manifest_path)
        start = height_from
        if start is None:
            start = 0 if manifest.max_height is None else manifest.max_height + 1
        if start > rc.height_to:
            logger.info(f"Output already covers height {rc.height_to}; nothing to append")
            return manifest.path

        logger.info(f"Appending heights {start}..{rc.height_to} to {manifest.out_dir}")
        source = self._source()
        try:
            blocks = iter_blocks(start, rc.height_to, source)
            manifest = append_incremental(manifest, build_graphs(blocks, rc), rc.progress_every,
                                          rc.memory_budget_bytes)
        finally:
            source.close()
        return manifest.path

    def sample(self, graph_source: Optional[str] = None) -> Dict[str, Any]:
        """Draw subgraph samples and write their feature files and the labels file.

        A sample whose root is unusable is logged and reported; it does not
        stop the run.

        Args:
            graph_source: Manifest, output directory or edge-list file (default: the configured output)

        Returns:
            Dict: Report with written, rejected and failed samples
        """
        rc = self.run_config
        store = GraphStore.load(graph_source or rc.manifest_path)
        roots = list(rc.sample_roots) or choose_roots(store, rc.sample_count, rc.sampler)
        os.makedirs(rc.sample_out_dir, exist_ok=True)
        labels = LabelsFile(os.path.join(rc.sample_out_dir, 'labels.tsv'))

        report: Dict[str, Any] = {'method': rc.sample_method, 'seed': rc.sampler.rng_seed,
                                  'written': [], 'rejected': [], 'errors': []}
        for index, root in enumerate(roots):
            sample_id = f"s{index:06d}"
            try:
                subgraph = sample(rc.sample_method, root, rc.sampler, store, sample_index=index)
            except BlockGraphError as e:
                error_handler.log_error_with_context(e, {'function': 'sample', 'sample_id': sample_id, 'root': root})
                report['errors'].append({'sample_id': sample_id, 'root': root, 'error': str(e)})
                continue
            if subgraph.rejected:
                report['rejected'].append({'sample_id': sample_id, 'root': root, 'reason': subgraph.rejected})
                continue
            encode_features(subgraph, store, rc.sample_out_dir, sample_id, labels)
            report['written'].append({'sample_id': sample_id, 'root': root, 'label': subgraph.label,
                                      'nodes': len(subgraph.nodes), 'edges': len(subgraph.edges)})

        _write_json(os.path.join(rc.sample_out_dir, 'report.json'), report)
        logger.info(
            f"Sampling finished: {len(report['written'])} written, {len(report['rejected'])} rejected, "
            f"{len(report['errors'])} failed"
        )
        return report

    def profile(self) -> Dict[str, Any]:
        """Per-block statistics over the configured range plus degree summaries of the output.

        Writes block_stats.tsv, rolling_means.tsv, script_shares.tsv,
        degrees_<Class>.tsv, degree_marginals_<Class>.tsv and summary.json.

        Returns:
            Dict: The summary written to summary.json
        """
        rc = self.run_config
        options = rc.profiler
        os.makedirs(options.out_dir, exist_ok=True)

        index_path = options.address_index
        if not index_path:
            index_path = os.path.join(options.out_dir, 'address_index.sqlite')
            for suffix in ('', '-wal', '-shm'):
                if os.path.exists(index_path + suffix):
                    os.remove(index_path + suffix)

        collected: List[BlockStats] = []
        mtp = {'checked': 0, 'mismatches': 0}

        with open(os.path.join(options.out_dir, 'block_stats.tsv'), 'w', encoding='utf-8', newline='') as stats_file, \
                open(os.path.join(options.out_dir, 'script_shares.tsv'), 'w', encoding='utf-8', newline='') as shares_file, \
                BlockProfiler(index_path, rc.network) as profiler:
            stats_file.write(format_row(STATS_COLUMNS))
            shares_file.write(format_row(['height', 'variant'] + [st.value for st in SCRIPT_TYPES]))

            def profiled(blocks: Iterable[BlockRecord]) -> Iterator[BlockRecord]:
                window: deque = deque(maxlen=11)
                for block in blocks:
                    stats = profiler.profile(block)
                    collected.append(stats)
                    stats_file.write(format_row(_cells(stats.to_row())))
                    for variant in ('inputs_outputs', 'outputs'):
                        for height, shares in script_type_share([block], variant):
                            shares_file.write(format_row([height, variant] + [shares[st.value] for st in SCRIPT_TYPES]))
                    if block.timestamp is not None:
                        window.append(block.timestamp)
                        # Compare only with full history (or from genesis)
                        if len(window) == window.maxlen or block.height == len(window) - 1:
                            mtp['checked'] += 1
                            if median_time_past(list(window)) != block.median_time:
                                mtp['mismatches'] += 1
                    yield block

            if rc.height_to < rc.height_from:
                logger.info(f"Empty height range {rc.height_from}..{rc.height_to}; writing headers only")
                scan = residual_scan([])
            else:
                source = self._source()
                try:
                    scan = residual_scan(profiled(iter_blocks(rc.height_from, rc.height_to, source)))
                finally:
                    source.close()

        self._write_rolling_means(collected, options)
        summary = self._summary(collected, scan, mtp)
        if options.degrees:
            summary['degrees'] = self._write_degree_summaries(options)

        _write_json(os.path.join(options.out_dir, 'summary.json'), summary)
        logger.info(f"Profile finished: {len(collected)} block(s) into {options.out_dir}")
        return summary

    def _write_rolling_means(self, collected: List[BlockStats], options):
        series = {name: [_series_value(stats, name) for stats in collected] for name in ROLLING_SERIES}
        means = {name: rolling_mean(values, options.rolling_window) for name, values in series.items()}
        with open(os.path.join(options.out_dir, 'rolling_means.tsv'), 'w', encoding='utf-8', newline='') as f:
            f.write(format_row(['height'] + [f"{name}_rolling" for name in ROLLING_SERIES]))
            for i, stats in enumerate(collected):
                f.write(format_row([stats.height] + [means[name][i] for name in ROLLING_SERIES]))

    def _summary(self, collected: List[BlockStats], scan, mtp: Dict[str, int]) -> Dict[str, Any]:
        correlations = {
            'dormancy_avg_lag1': lag_pearson([stats.dormancy.avg for stats in collected]),
        }
        for x_name, y_name in CORRELATION_PAIRS:
            x = [_series_value(stats, x_name) for stats in collected]
            y = [_series_value(stats, y_name) for stats in collected]
            correlations[f"{x_name}~{y_name}"] = pearson(x, y)

        return {
            'blocks': len(collected),
            'height_from': collected[0].height if collected else None,
            'height_to': collected[-1].height if collected else None,
            'empty_blocks': sum(1 for stats in collected if stats.is_empty),
            'fee_total': sum(stats.fee_total for stats in collected),
            'minted_total': sum(stats.minted for stats in collected),
            'unclaimed_total': sum(stats.unclaimed for stats in collected),
            'addr_new_total': sum(stats.addr_new for stats in collected),
            'residual': {
                'total': scan.total,
                'buckets': scan.buckets,
                'flagged': [{'height': h, 'txid': txid, 'value': value} for h, txid, value in scan.flagged],
            },
            'median_time_past': mtp,
            'correlations': correlations,
        }

    def _write_degree_summaries(self, options) -> List[Dict[str, Any]]:
        manifest_path = self.run_config.manifest_path
        if not os.path.exists(manifest_path):
            logger.warning(f"No manifest at {manifest_path}; degree summaries skipped")
            return []
        manifest = Manifest.load(manifest_path)

        results = []
        for kind in DEGREE_CLASSES:
            summary = degree_summary(manifest, kind, options.entropy_mode)
            with open(os.path.join(options.out_dir, f"degrees_{kind.value}.tsv"), 'w', encoding='utf-8', newline='') as f:
                f.write(format_row(['in_degree_bin', 'out_degree_bin', 'count', 'support']))
                for row in histogram_rows(summary):
                    f.write(format_row(row))
            with open(os.path.join(options.out_dir, f"degree_marginals_{kind.value}.tsv"), 'w', encoding='utf-8', newline='') as f:
                f.write(format_row(['direction', 'degree_bin', 'count', 'support']))
                for direction in DIRECTIONS:
                    for row in summary.marginals[direction]:
                        f.write(format_row([direction] + list(row)))
            results.append(summary.to_dict())
        return results


def _series_value(stats: BlockStats, name: str) -> float:
    """Numeric value of a BlockStats column for series work; empty statistics count as 0."""
    value = stats.to_row()[STATS_COLUMNS.index(name)]
    return 0 if value is None else value
