#!/usr/bin/env python3
"""
blockgraph

Turns Bitcoin blocks into a typed value-flow graph, serializes it as
bulk-import TSV batches, samples subgraphs and profiles blocks.

Usage:
    python main.py build --fixture-dir blocks/ --from 0 --to 100
    python main.py append --endpoint http://127.0.0.1:8332 --to 200
    python main.py sample --method forest_fire --count 100 --seed 7
    python main.py profile --fixture-dir blocks/ --from 0 --to 100
    python main.py config dump

Exit codes:
    0 success, 1 configuration, 2 transport/parse, 3 sequencing, 4 data invariant
"""

import argparse
import sys
from typing import Any, Dict, List, Optional
from config import Config, ENV_PREFIX
from error_handler import BlockGraphError, ConfigError, error_handler
from logger import reconfigure_loggers, setup_logger

logger = setup_logger(__name__)

# CLI flag (argparse dest) -> config key
SOURCE_FLAGS = {
    'endpoint': 'ENDPOINT',
    'fixture_dir': 'FIXTURE_DIR',
    'network': 'NETWORK',
    'height_from': 'HEIGHT_FROM',
    'height_to': 'HEIGHT_TO',
    'prefetch_window': 'PREFETCH_WINDOW',
    'request_timeout': 'REQUEST_TIMEOUT',
}
OUTPUT_FLAGS = {
    'out_dir': 'OUT_DIR',
    'batch_size': 'BATCH_SIZE',
    'compression': 'COMPRESSION',
    'workers': 'WORKERS',
    'memory_budget_mb': 'MEMORY_BUDGET_MB',
    'denominator_mode': 'TRANSFER_DENOMINATOR_MODE',
    'max_inout': 'MAX_INOUT_THRESHOLD',
    'aggregate_tx_inputs': 'AGGREGATE_TX_INPUTS',
}
SAMPLE_FLAGS = {
    'out_dir': 'OUT_DIR',
    'method': 'SAMPLE_METHOD',
    'count': 'SAMPLE_COUNT',
    'roots': 'SAMPLE_ROOTS',
    'hops': 'SAMPLE_HOPS',
    'n': 'SAMPLE_N',
    'delta': 'SAMPLE_DELTA',
    'direction': 'SAMPLE_DIRECTION',
    'stop_on': 'SAMPLE_STOP_ON',
    'seed': 'RNG_SEED',
    'sample_out_dir': 'SAMPLE_OUT_DIR',
}
PROFILE_FLAGS = {
    'out_dir': 'OUT_DIR',
    'profile_out_dir': 'PROFILE_OUT_DIR',
    'entropy_mode': 'ENTROPY_MODE',
    'rolling_window': 'ROLLING_WINDOW',
    'address_index': 'ADDRESS_INDEX',
}


def _add_source_args(parser: argparse.ArgumentParser):
    parser.add_argument('--endpoint', help='Node REST base URL, e.g. http://127.0.0.1:8332')
    parser.add_argument('--fixture-dir', help='Directory of {height}.json block files')
    parser.add_argument('--network', choices=['mainnet', 'testnet', 'regtest'])
    parser.add_argument('--from', dest='height_from', type=int, help='First height (inclusive)')
    parser.add_argument('--to', dest='height_to', type=int, help='Last height (inclusive)')
    parser.add_argument('--prefetch-window', type=int)
    parser.add_argument('--request-timeout', type=float)


def _add_output_args(parser: argparse.ArgumentParser):
    parser.add_argument('--out-dir', help='Graph output directory')
    parser.add_argument('--batch-size', type=int, help='Blocks per batch')
    parser.add_argument('--compression', choices=['none', 'gzip'])
    parser.add_argument('--workers', type=int, help='Build processes')
    parser.add_argument('--memory-budget-mb', type=int)
    parser.add_argument('--denominator-mode', choices=['as-printed', 'conserving'])
    parser.add_argument('--max-inout', type=int, help='Skip txs with more inputs AND outputs than this')
    parser.add_argument('--aggregate-tx-inputs', choices=['true', 'false'])


class CommandLineParser(argparse.ArgumentParser):
    """ArgumentParser whose usage errors surface as ConfigError (exit code 1)."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        raise ConfigError(f"{self.prog}: {message}")


def _common_parser() -> argparse.ArgumentParser:
    """Options accepted both before and after the subcommand."""
    common = CommandLineParser(add_help=False)
    # Suppressed defaults keep a value given before the subcommand
    common.add_argument('--config', default=argparse.SUPPRESS, help='Flat KEY=value config file')
    common.add_argument('--log-level', default=argparse.SUPPRESS, choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'])
    common.add_argument('--set', dest='command_set', action='append', default=[], metavar='KEY=VALUE',
                        help='Override any config key (repeatable)')
    return common


def build_parser() -> argparse.ArgumentParser:
    parser = CommandLineParser(
        prog='blockgraph',
        description='Bitcoin block-to-graph extraction, sampling and profiling.',
        epilog=f"Every setting can also be given as an environment variable {ENV_PREFIX}<KEY>.",
    )
    parser.add_argument('--config', help='Flat KEY=value config file')
    parser.add_argument('--log-level', choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'])
    parser.add_argument('--set', action='append', default=[], metavar='KEY=VALUE',
                        help='Override any config key (repeatable)')
    commands = parser.add_subparsers(dest='command', required=True)
    common = [_common_parser()]

    build = commands.add_parser('build', parents=common, help='Ingest, build and serialize a height range')
    _add_source_args(build)
    _add_output_args(build)

    append = commands.add_parser('append', parents=common, help='Extend an existing output with the next heights')
    _add_source_args(append)
    _add_output_args(append)

    sample = commands.add_parser('sample', parents=common, help='Sample subgraphs from a serialized graph')
    sample.add_argument('--graph', help='Manifest, output directory or edge-list file (default: OUT_DIR)')
    sample.add_argument('--out-dir', help='Graph output directory')
    sample.add_argument('--method', choices=['bfs', 'dfs', 'forest_fire'])
    sample.add_argument('--count', type=int)
    sample.add_argument('--roots', help='Comma-separated node keys')
    sample.add_argument('--hops', type=int)
    sample.add_argument('--n', type=int, help='Forest Fire neighbours per hop')
    sample.add_argument('--delta', type=int, help='Forest Fire budget decrease per hop')
    sample.add_argument('--direction', choices=['both', 'out', 'in'])
    sample.add_argument('--stop-on', help='Comma-separated node kinds or edge types not expanded')
    sample.add_argument('--seed', type=int)
    sample.add_argument('--sample-out-dir')

    profile = commands.add_parser('profile', parents=common, help='Per-block statistics and degree summaries')
    _add_source_args(profile)
    profile.add_argument('--out-dir', help='Graph output directory used for degree summaries')
    profile.add_argument('--profile-out-dir')
    profile.add_argument('--entropy-mode', choices=['distinct_values', 'per_node'])
    profile.add_argument('--rolling-window', type=int)
    profile.add_argument('--address-index', help='Persistent first-seen address index')
    profile.add_argument('--no-degrees', action='store_true', help='Skip degree summaries')

    config = commands.add_parser('config', parents=common, help='Configuration helpers')
    config.add_argument('action', choices=['dump'])

    return parser


def collect_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    """Map parsed flags onto config keys; flags left unset are not overrides."""
    flags: Dict[str, str] = {}
    if args.command in ('build', 'append'):
        flags = {**SOURCE_FLAGS, **OUTPUT_FLAGS}
    elif args.command == 'sample':
        flags = SAMPLE_FLAGS
    elif args.command == 'profile':
        flags = {**SOURCE_FLAGS, **PROFILE_FLAGS}

    overrides: Dict[str, Any] = {key: getattr(args, dest, None) for dest, key in flags.items()}
    if args.command == 'profile' and args.no_degrees:
        overrides['PROFILE_DEGREES'] = 'false'
    if args.log_level:
        overrides['LOG_LEVEL'] = args.log_level

    for item in [*args.set, *getattr(args, 'command_set', [])]:
        key, sep, value = item.partition('=')
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        overrides[key.strip().upper()] = value
    return overrides


def run(argv: Optional[List[str]] = None) -> int:
    """Parse arguments, run one command and return its exit code."""
    try:
        args = build_parser().parse_args(argv)
    except ConfigError as e:
        error_handler.log_error_with_context(e, {'command': None})
        return error_handler.exit_code_for(e)

    try:
        Config.load(args.config, collect_overrides(args))
        reconfigure_loggers()

        if args.command == 'config':
            sys.stdout.write(Config.dump())
            return 0

        problems = Config.validate()
        if problems:
            raise ConfigError('; '.join(problems))

        from pipeline import Pipeline
        pipeline = Pipeline(Config.to_run_config())

        if args.command == 'build':
            print(pipeline.build())
        elif args.command == 'append':
            print(pipeline.append(height_from=args.height_from))
        elif args.command == 'sample':
            report = pipeline.sample(args.graph)
            print(f"{len(report['written'])} written, {len(report['rejected'])} rejected, {len(report['errors'])} failed")
        elif args.command == 'profile':
            pipeline.profile()
            print(Config.PROFILE_OUT_DIR)
        return 0

    except BlockGraphError as e:
        error_handler.log_error_with_context(e, {'command': args.command})
        return error_handler.exit_code_for(e)
    except KeyboardInterrupt:
        logger.info("Interrupted")
        return 130


def main():
    """Main entry point."""
    sys.exit(run())


if __name__ == "__main__":
    # Check Python version
    if sys.version_info < (3, 9):
        print("Error: Python 3.9 or higher is required")
        sys.exit(1)

    main()
