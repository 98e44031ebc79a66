import os
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Tuple
from dotenv import load_dotenv, dotenv_values
from errors import ConfigError

# Load environment variables
load_dotenv()

ENV_PREFIX = 'BLOCKGRAPH_'


def _as_bool(value: str) -> bool:
    return str(value).strip().lower() in ('1', 'true', 'yes', 'on')


def _as_set(value: str) -> frozenset:
    return frozenset(part.strip() for part in str(value).split(',') if part.strip())


def _as_list(value: str) -> List[str]:
    return [part.strip() for part in str(value).split(',') if part.strip()]


def _as_optional_int(value: str) -> Optional[int]:
    value = str(value).strip()
    return int(value) if value else None


# Every key: (default, cast). Defaults are strings so `config dump` round-trips.
SETTINGS: Dict[str, Tuple[str, Callable[[str], Any]]] = {
    # Block source
    'ENDPOINT': ('', str),
    'REQUEST_TIMEOUT': ('30', float),
    'PREFETCH_WINDOW': ('8', int),
    'FIXTURE_DIR': ('', str),
    'NETWORK': ('mainnet', str),
    'HEIGHT_FROM': ('0', int),
    'HEIGHT_TO': ('0', int),
    'RATE_LIMIT_REQUESTS': ('64', int),
    'RATE_LIMIT_PERIOD': ('1', float),
    'MAX_RETRIES': ('3', int),

    # Graph building
    'TRANSFER_DENOMINATOR_MODE': ('as-printed', str),
    'MAX_INOUT_THRESHOLD': ('20', int),
    'SKIP_ZERO_VALUE': ('true', _as_bool),
    'AGGREGATE_TX_INPUTS': ('false', _as_bool),

    # Serialization
    'OUT_DIR': ('graph_out', str),
    'BATCH_SIZE': ('1000', int),
    'COMPRESSION': ('none', str),
    'MEMORY_BUDGET_MB': ('256', int),
    'WORKERS': (str(os.cpu_count() or 1), int),

    # Sampling
    'SAMPLE_METHOD': ('forest_fire', str),
    'SAMPLE_COUNT': ('10', int),
    'SAMPLE_ROOTS': ('', _as_list),
    'SAMPLE_HOPS': ('3', int),
    'SAMPLE_N': ('10', int),
    'SAMPLE_DELTA': ('3', int),
    'SAMPLE_DIRECTION': ('both', str),
    'SAMPLE_NODE_WHITELIST': ('', _as_set),
    'SAMPLE_NODE_BLACKLIST': ('', _as_set),
    'SAMPLE_EDGE_WHITELIST': ('', _as_set),
    'SAMPLE_EDGE_BLACKLIST': ('', _as_set),
    'SAMPLE_STOP_ON': ('', _as_set),
    'SAMPLE_MIN_NODES': ('1', int),
    'SAMPLE_MAX_NODES': ('', _as_optional_int),
    'SAMPLE_MIN_EDGES': ('0', int),
    'SAMPLE_MAX_EDGES': ('', _as_optional_int),
    'RNG_SEED': ('0', int),
    'SAMPLE_OUT_DIR': ('samples_out', str),

    # Profiling
    'PROFILE_OUT_DIR': ('profile_out', str),
    'PROFILE_DEGREES': ('true', _as_bool),
    'ENTROPY_MODE': ('distinct_values', str),
    'ROLLING_WINDOW': ('5000', int),
    'ADDRESS_INDEX': ('', str),

    # Logging
    'LOG_LEVEL': ('INFO', str),
    'LOG_FILE': ('', str),
    'PROGRESS_EVERY': ('1000', int),
}


def _lookup(key: str, file_values: Dict[str, Optional[str]]) -> str:
    env_value = os.getenv(ENV_PREFIX + key)
    if env_value is not None:
        return env_value
    if file_values.get(key) is not None:
        return file_values[key]
    return SETTINGS[key][0]


class Config:
    """Configuration for the blockgraph toolkit.

    Values resolve as: CLI override > BLOCKGRAPH_<KEY> environment variable >
    config file (KEY=value lines) > built-in default.
    """

    # Block source
    ENDPOINT: str = _lookup('ENDPOINT', {})
    REQUEST_TIMEOUT: float = float(_lookup('REQUEST_TIMEOUT', {}))
    PREFETCH_WINDOW: int = int(_lookup('PREFETCH_WINDOW', {}))
    FIXTURE_DIR: str = _lookup('FIXTURE_DIR', {})
    NETWORK: str = _lookup('NETWORK', {})
    HEIGHT_FROM: int = int(_lookup('HEIGHT_FROM', {}))
    HEIGHT_TO: int = int(_lookup('HEIGHT_TO', {}))
    RATE_LIMIT_REQUESTS: int = int(_lookup('RATE_LIMIT_REQUESTS', {}))
    RATE_LIMIT_PERIOD: float = float(_lookup('RATE_LIMIT_PERIOD', {}))
    MAX_RETRIES: int = int(_lookup('MAX_RETRIES', {}))

    # Graph building
    TRANSFER_DENOMINATOR_MODE: str = _lookup('TRANSFER_DENOMINATOR_MODE', {})
    MAX_INOUT_THRESHOLD: int = int(_lookup('MAX_INOUT_THRESHOLD', {}))
    SKIP_ZERO_VALUE: bool = _as_bool(_lookup('SKIP_ZERO_VALUE', {}))
    AGGREGATE_TX_INPUTS: bool = _as_bool(_lookup('AGGREGATE_TX_INPUTS', {}))

    # Serialization
    OUT_DIR: str = _lookup('OUT_DIR', {})
    BATCH_SIZE: int = int(_lookup('BATCH_SIZE', {}))
    COMPRESSION: str = _lookup('COMPRESSION', {})
    MEMORY_BUDGET_MB: int = int(_lookup('MEMORY_BUDGET_MB', {}))
    WORKERS: int = int(_lookup('WORKERS', {}))

    # Sampling
    SAMPLE_METHOD: str = _lookup('SAMPLE_METHOD', {})
    SAMPLE_COUNT: int = int(_lookup('SAMPLE_COUNT', {}))
    SAMPLE_ROOTS: List[str] = _as_list(_lookup('SAMPLE_ROOTS', {}))
    SAMPLE_HOPS: int = int(_lookup('SAMPLE_HOPS', {}))
    SAMPLE_N: int = int(_lookup('SAMPLE_N', {}))
    SAMPLE_DELTA: int = int(_lookup('SAMPLE_DELTA', {}))
    SAMPLE_DIRECTION: str = _lookup('SAMPLE_DIRECTION', {})
    SAMPLE_NODE_WHITELIST: frozenset = _as_set(_lookup('SAMPLE_NODE_WHITELIST', {}))
    SAMPLE_NODE_BLACKLIST: frozenset = _as_set(_lookup('SAMPLE_NODE_BLACKLIST', {}))
    SAMPLE_EDGE_WHITELIST: frozenset = _as_set(_lookup('SAMPLE_EDGE_WHITELIST', {}))
    SAMPLE_EDGE_BLACKLIST: frozenset = _as_set(_lookup('SAMPLE_EDGE_BLACKLIST', {}))
    SAMPLE_STOP_ON: frozenset = _as_set(_lookup('SAMPLE_STOP_ON', {}))
    SAMPLE_MIN_NODES: int = int(_lookup('SAMPLE_MIN_NODES', {}))
    SAMPLE_MAX_NODES: Optional[int] = _as_optional_int(_lookup('SAMPLE_MAX_NODES', {}))
    SAMPLE_MIN_EDGES: int = int(_lookup('SAMPLE_MIN_EDGES', {}))
    SAMPLE_MAX_EDGES: Optional[int] = _as_optional_int(_lookup('SAMPLE_MAX_EDGES', {}))
    RNG_SEED: int = int(_lookup('RNG_SEED', {}))
    SAMPLE_OUT_DIR: str = _lookup('SAMPLE_OUT_DIR', {})

    # Profiling
    PROFILE_OUT_DIR: str = _lookup('PROFILE_OUT_DIR', {})
    PROFILE_DEGREES: bool = _as_bool(_lookup('PROFILE_DEGREES', {}))
    ENTROPY_MODE: str = _lookup('ENTROPY_MODE', {})
    ROLLING_WINDOW: int = int(_lookup('ROLLING_WINDOW', {}))
    ADDRESS_INDEX: str = _lookup('ADDRESS_INDEX', {})

    # Logging
    LOG_LEVEL: str = _lookup('LOG_LEVEL', {})
    LOG_FILE: str = _lookup('LOG_FILE', {})
    PROGRESS_EVERY: int = int(_lookup('PROGRESS_EVERY', {}))

    # Raw string values as resolved, used by `config dump`
    _raw: Dict[str, str] = {key: _lookup(key, {}) for key in SETTINGS}

    @classmethod
    def load(cls, config_file: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None) -> None:
        """Resolve every setting from the config file, environment and overrides.

        Args:
            config_file: Optional path to a flat KEY=value file
            overrides: Values from command-line flags (None entries are ignored)
        """
        file_values: Dict[str, Optional[str]] = {}
        if config_file:
            if not os.path.exists(config_file):
                raise ConfigError(f"Config file not found: {config_file}")
            file_values = dict(dotenv_values(config_file))
            unknown = sorted(set(file_values) - set(SETTINGS))
            if unknown:
                raise ConfigError(f"Unknown config keys in {config_file}: {', '.join(unknown)}")

        unknown = sorted(set(overrides or {}) - set(SETTINGS))
        if unknown:
            raise ConfigError(f"Unknown config keys: {', '.join(unknown)}")

        for key, (_, cast) in SETTINGS.items():
            raw = _lookup(key, file_values)
            if overrides and overrides.get(key) is not None:
                raw = str(overrides[key])
            cls._raw[key] = raw
            try:
                setattr(cls, key, cast(raw))
            except ValueError as e:
                raise ConfigError(f"Invalid value for {key}: {raw!r} ({e})")

    @classmethod
    def dump(cls) -> str:
        """Render all effective settings as KEY=value lines."""
        return "\n".join(f"{key}={cls._raw[key]}" for key in SETTINGS) + "\n"

    @classmethod
    def validate(cls) -> List[str]:
        """Validate the configuration.

        Returns:
            List[str]: Problems found; empty when the configuration is usable
        """
        problems = []

        if cls.TRANSFER_DENOMINATOR_MODE not in ('as-printed', 'conserving'):
            problems.append(f"TRANSFER_DENOMINATOR_MODE must be 'as-printed' or 'conserving', got {cls.TRANSFER_DENOMINATOR_MODE!r}")
        if cls.MAX_INOUT_THRESHOLD < 1:
            problems.append("MAX_INOUT_THRESHOLD must be >= 1")
        if cls.BATCH_SIZE < 1:
            problems.append("BATCH_SIZE must be >= 1")
        if cls.COMPRESSION not in ('none', 'gzip'):
            problems.append(f"COMPRESSION must be 'none' or 'gzip', got {cls.COMPRESSION!r}")
        if cls.NETWORK not in ('mainnet', 'testnet', 'regtest'):
            problems.append(f"NETWORK must be mainnet, testnet or regtest, got {cls.NETWORK!r}")
        if cls.PREFETCH_WINDOW < 1:
            problems.append("PREFETCH_WINDOW must be >= 1")
        if cls.WORKERS < 1:
            problems.append("WORKERS must be >= 1")
        if cls.MEMORY_BUDGET_MB < 1:
            problems.append("MEMORY_BUDGET_MB must be >= 1")
        if cls.SAMPLE_METHOD not in ('bfs', 'dfs', 'forest_fire'):
            problems.append(f"SAMPLE_METHOD must be bfs, dfs or forest_fire, got {cls.SAMPLE_METHOD!r}")
        if cls.SAMPLE_DIRECTION not in ('both', 'out', 'in'):
            problems.append(f"SAMPLE_DIRECTION must be both, out or in, got {cls.SAMPLE_DIRECTION!r}")
        if cls.SAMPLE_N < 1:
            problems.append("SAMPLE_N must be >= 1")
        if cls.SAMPLE_MAX_NODES is not None and cls.SAMPLE_MAX_NODES < cls.SAMPLE_MIN_NODES:
            problems.append("SAMPLE_MAX_NODES must be >= SAMPLE_MIN_NODES")
        if cls.SAMPLE_MAX_EDGES is not None and cls.SAMPLE_MAX_EDGES < cls.SAMPLE_MIN_EDGES:
            problems.append("SAMPLE_MAX_EDGES must be >= SAMPLE_MIN_EDGES")
        if cls.ENTROPY_MODE not in ('distinct_values', 'per_node'):
            problems.append(f"ENTROPY_MODE must be distinct_values or per_node, got {cls.ENTROPY_MODE!r}")
        if cls.ROLLING_WINDOW < 1:
            problems.append("ROLLING_WINDOW must be >= 1")

        return problems

    @classmethod
    def to_run_config(cls) -> 'RunConfig':
        """Assemble the typed run configuration from the flat settings."""
        from value_split import ValueSplitConfig
        from tsv_writer import BatchLayout
        from sampler import SamplerConfig

        return RunConfig(
            endpoint=cls.ENDPOINT or None,
            fixture_dir=cls.FIXTURE_DIR or None,
            network=cls.NETWORK,
            request_timeout=cls.REQUEST_TIMEOUT,
            prefetch_window=cls.PREFETCH_WINDOW,
            height_from=cls.HEIGHT_FROM,
            height_to=cls.HEIGHT_TO,
            value_split=ValueSplitConfig(
                transfer_denominator_mode=cls.TRANSFER_DENOMINATOR_MODE,
                max_inout_threshold=cls.MAX_INOUT_THRESHOLD,
                skip_zero_value=cls.SKIP_ZERO_VALUE,
                aggregate_tx_inputs=cls.AGGREGATE_TX_INPUTS,
            ),
            layout=BatchLayout(
                out_dir=cls.OUT_DIR,
                batch_size=cls.BATCH_SIZE,
                compression=cls.COMPRESSION,
            ),
            sampler=SamplerConfig(
                h_max=cls.SAMPLE_HOPS,
                n=cls.SAMPLE_N,
                delta=cls.SAMPLE_DELTA,
                direction=cls.SAMPLE_DIRECTION,
                node_whitelist=cls.SAMPLE_NODE_WHITELIST or None,
                node_blacklist=cls.SAMPLE_NODE_BLACKLIST,
                edge_whitelist=cls.SAMPLE_EDGE_WHITELIST or None,
                edge_blacklist=cls.SAMPLE_EDGE_BLACKLIST,
                stop_on=cls.SAMPLE_STOP_ON,
                min_nodes=cls.SAMPLE_MIN_NODES,
                max_nodes=cls.SAMPLE_MAX_NODES,
                min_edges=cls.SAMPLE_MIN_EDGES,
                max_edges=cls.SAMPLE_MAX_EDGES,
                rng_seed=cls.RNG_SEED,
            ),
            sample_method=cls.SAMPLE_METHOD,
            sample_count=cls.SAMPLE_COUNT,
            sample_roots=list(cls.SAMPLE_ROOTS),
            sample_out_dir=cls.SAMPLE_OUT_DIR,
            profiler=ProfilerOptions(
                out_dir=cls.PROFILE_OUT_DIR,
                degrees=cls.PROFILE_DEGREES,
                entropy_mode=cls.ENTROPY_MODE,
                rolling_window=cls.ROLLING_WINDOW,
                address_index=cls.ADDRESS_INDEX or None,
            ),
            workers=cls.WORKERS,
            memory_budget_bytes=cls.MEMORY_BUDGET_MB * 1024 * 1024,
            max_retries=cls.MAX_RETRIES,
            rate_limit_requests=cls.RATE_LIMIT_REQUESTS,
            rate_limit_period=cls.RATE_LIMIT_PERIOD,
            progress_every=cls.PROGRESS_EVERY,
        )


@dataclass
class ProfilerOptions:
    """Toggles for the profile command."""
    out_dir: str = 'profile_out'
    degrees: bool = True
    entropy_mode: str = 'distinct_values'
    rolling_window: int = 5000
    address_index: Optional[str] = None


@dataclass
class RunConfig:
    """Everything one command invocation needs, already typed."""
    endpoint: Optional[str]
    fixture_dir: Optional[str]
    network: str
    request_timeout: float
    prefetch_window: int
    height_from: int
    height_to: int
    value_split: Any
    layout: Any
    sampler: Any
    sample_method: str = 'forest_fire'
    sample_count: int = 10
    sample_roots: List[str] = field(default_factory=list)
    sample_out_dir: str = 'samples_out'
    profiler: ProfilerOptions = field(default_factory=ProfilerOptions)
    workers: int = 1
    memory_budget_bytes: int = 256 * 1024 * 1024
    max_retries: int = 3
    rate_limit_requests: int = 64
    rate_limit_period: float = 1.0
    progress_every: int = 1000

    @property
    def manifest_path(self) -> str:
        return os.path.join(self.layout.out_dir, 'manifest.json')

    def source_problems(self) -> List[str]:
        """Check that exactly one block source is configured."""
        if bool(self.endpoint) == bool(self.fixture_dir):
            return ["Exactly one of ENDPOINT or FIXTURE_DIR must be set"]
        return []
