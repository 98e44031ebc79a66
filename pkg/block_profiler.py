from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple
import numpy as np
from amounts import SATS_PER_BTC, block_subsidy, round_half_away_from_zero
from block_parser import BlockRecord, TxRecord
from error_handler import InvariantViolationError
from script_address import SCRIPT_TYPES, ScriptBytes, classify_script, derive_script_id
from seen_index import SeenIndex
from value_split import residual
from logger import setup_logger

logger = setup_logger(__name__)

MTP_SPAN = 11

# Upper bounds (inclusive) of the residual buckets, in satoshis
RESIDUAL_BUCKETS = (
    ('le_1sat', 1),
    ('le_1btc', SATS_PER_BTC),
    ('gt_1btc', None),
)

SHARE_VARIANTS = ('inputs_outputs', 'outputs')


@dataclass
class Summary:
    """min / max / avg / sum of one per-transaction quantity; all None when there is nothing to summarize."""
    min: Optional[int] = None
    max: Optional[int] = None
    avg: Optional[float] = None
    sum: Optional[int] = None

    @classmethod
    def of(cls, values: Sequence[int], exact: bool = False) -> 'Summary':
        if not values:
            return cls()
        total = sum(values)
        avg = round_half_away_from_zero(Fraction(total, len(values))) if exact else total / len(values)
        return cls(min=min(values), max=max(values), avg=avg, sum=total)


@dataclass
class Dormancy:
    """Age in blocks of the outputs spent in a block."""
    avg: Optional[float] = None
    median: Optional[float] = None
    min: Optional[int] = None
    max: Optional[int] = None
    count: int = 0

    @classmethod
    def of(cls, ages: Sequence[int]) -> 'Dormancy':
        if not ages:
            return cls()
        arr = np.asarray(ages, dtype=np.int64)
        return cls(avg=float(arr.mean()), median=float(np.median(arr)),
                   min=int(arr.min()), max=int(arr.max()), count=len(ages))


@dataclass
class BlockStats:
    height: int
    tx_count: int
    is_empty: bool
    txin_count: Summary
    txout_count: Summary
    txin_value: Summary
    txout_value: Summary
    addr_total: int
    addr_unique: int
    addr_new: int
    script_type_counts: Dict[str, int]
    fee_total: int
    minted: int
    unclaimed: int
    residual_total: int
    dormancy: Dormancy
    coinbase_txout_count: int = 0
    minted_spent_count: int = 0
    minted_spent_value: int = 0
    minted_age: Dormancy = field(default_factory=Dormancy)
    median_time: int = 0
    difficulty: float = 0.0
    size_bytes: int = 0
    stripped_size_bytes: int = 0
    weight_units: int = 0

    def to_row(self) -> List:
        """Values in ``STATS_COLUMNS`` order; None marks an empty statistic."""
        row = [self.height, self.tx_count, int(self.is_empty)]
        for summary in (self.txin_count, self.txout_count, self.txin_value, self.txout_value):
            row += [summary.min, summary.max, summary.avg, summary.sum]
        row += [self.addr_total, self.addr_unique, self.addr_new]
        row += [self.script_type_counts.get(st.value, 0) for st in SCRIPT_TYPES]
        row += [self.fee_total, self.minted, self.unclaimed, self.residual_total]
        row += [self.dormancy.avg, self.dormancy.median, self.dormancy.min, self.dormancy.max]
        row += [self.coinbase_txout_count, self.minted_spent_count, self.minted_spent_value]
        row += [self.minted_age.avg, self.minted_age.median, self.minted_age.min, self.minted_age.max]
        row += [self.median_time, self.difficulty, self.size_bytes, self.stripped_size_bytes, self.weight_units]
        return row


def _stat_columns(prefix: str) -> List[str]:
    return [f"{prefix}_{name}" for name in ('min', 'max', 'avg', 'sum')]


STATS_COLUMNS = (
    ['height', 'tx_count', 'is_empty']
    + _stat_columns('txin_count') + _stat_columns('txout_count')
    + _stat_columns('txin_value') + _stat_columns('txout_value')
    + ['addr_total', 'addr_unique', 'addr_new']
    + [f"script_{st.value}" for st in SCRIPT_TYPES]
    + ['fee_total', 'minted', 'unclaimed', 'residual_total']
    + ['dormancy_avg', 'dormancy_median', 'dormancy_min', 'dormancy_max']
    + ['coinbase_txout_count', 'minted_spent_count', 'minted_spent_value']
    + ['minted_age_avg', 'minted_age_median', 'minted_age_min', 'minted_age_max']
    + ['median_time', 'difficulty', 'size_bytes', 'stripped_size_bytes', 'weight_units']
)


def _transfers(block: BlockRecord) -> Tuple[TxRecord, ...]:
    return block.txs[1:]


def _block_scripts(block: BlockRecord, include_inputs: bool = True) -> Iterator[Tuple[ScriptBytes, int, str]]:
    """(script, output index, creating txid) of every spent prevout and every created output."""
    for tx in block.txs:
        if include_inputs and not tx.is_coinbase:
            for txin in tx.vin:
                yield txin.prevout_script, txin.prev_vout_index, txin.prev_txid
        for txout in tx.vout:
            yield txout.script, txout.index_n, tx.txid


def fee_total(block: BlockRecord) -> int:
    return sum(tx.fee for tx in _transfers(block))


def minted_amount(block: BlockRecord) -> int:
    """Newly created coins actually claimed by the coinbase."""
    claimed = block.coinbase.output_total
    return max(0, min(block_subsidy(block.height), claimed - fee_total(block)))


def unclaimed_reward(block: BlockRecord) -> int:
    """Subsidy plus fees the coinbase did not pay out, lost for good.

    Raises:
        InvariantViolationError: The coinbase pays more than subsidy plus fees
    """
    available = block_subsidy(block.height) + fee_total(block)
    shortfall = available - block.coinbase.output_total
    if shortfall < 0:
        raise InvariantViolationError(
            f"Block {block.height} coinbase claims {-shortfall} sat more than subsidy plus fees"
        )
    return shortfall


def coin_dormancy(block: BlockRecord) -> Dormancy:
    """Spend height minus creation height over every non-coinbase input."""
    ages = [
        block.height - txin.prevout_height
        for tx in _transfers(block) for txin in tx.vin
    ]
    return Dormancy.of(ages)


def minted_coin_spending(block: BlockRecord) -> Tuple[int, int, Dormancy]:
    """Count, value and age of spent outputs that were created by a coinbase."""
    spent = [
        txin for tx in _transfers(block) for txin in tx.vin
        if txin.prevout_generated
    ]
    ages = [block.height - txin.prevout_height for txin in spent]
    return len(spent), sum(txin.prevout_value for txin in spent), Dormancy.of(ages)


def block_addresses(block: BlockRecord, network: str = 'mainnet') -> List[str]:
    """Every address-kind script ID touched by the block, with repetitions."""
    addresses = []
    for script, out_index, txid in _block_scripts(block):
        script_id = derive_script_id(script, out_index, txid, network)
        if script_id.is_address:
            addresses.append(script_id.canonical)
    return addresses


def script_type_counts(block: BlockRecord, include_inputs: bool = True) -> Counter:
    return Counter(classify_script(script).value for script, _, _ in _block_scripts(block, include_inputs))


def per_block_stats(block: BlockRecord, addr_index: SeenIndex, network: str = 'mainnet') -> BlockStats:
    """Compute the statistics of one block and record its addresses as seen.

    Args:
        block: The block
        addr_index: First-seen address index covering every lower height
        network: Address encoding network

    Returns:
        BlockStats: Statistics of the block

    Raises:
        SequencingError: The index is not positioned right below ``block.height``
        InvariantViolationError: Overclaiming coinbase or value-creating tx
    """
    transfers = _transfers(block)
    addresses = block_addresses(block, network)
    unique = list(dict.fromkeys(addresses))
    new = addr_index.register(unique, block.height, sequenced=True)
    spent_count, spent_value, minted_age = minted_coin_spending(block)

    return BlockStats(
        height=block.height,
        tx_count=len(block.txs),
        is_empty=block.is_empty,
        txin_count=Summary.of([len(tx.vin) for tx in transfers]),
        txout_count=Summary.of([len(tx.vout) for tx in transfers]),
        txin_value=Summary.of([tx.input_total for tx in transfers], exact=True),
        txout_value=Summary.of([tx.output_total for tx in transfers], exact=True),
        addr_total=len(addresses),
        addr_unique=len(unique),
        addr_new=len(new),
        script_type_counts=dict(script_type_counts(block)),
        fee_total=fee_total(block),
        minted=minted_amount(block),
        unclaimed=unclaimed_reward(block),
        residual_total=sum(residual(tx) for tx in transfers),
        dormancy=coin_dormancy(block),
        coinbase_txout_count=len(block.coinbase.vout),
        minted_spent_count=spent_count,
        minted_spent_value=spent_value,
        minted_age=minted_age,
        median_time=block.median_time,
        difficulty=block.difficulty,
        size_bytes=block.size_bytes,
        stripped_size_bytes=block.stripped_size_bytes,
        weight_units=block.weight_units,
    )


@dataclass
class ResidualScan:
    """Value silently destroyed by transactions (inputs - outputs - fee > 0)."""
    per_block: List[Tuple[int, int]] = field(default_factory=list)
    flagged: List[Tuple[int, str, int]] = field(default_factory=list)
    buckets: Dict[str, int] = field(default_factory=lambda: {name: 0 for name, _ in RESIDUAL_BUCKETS})
    total: int = 0

    @property
    def flagged_heights(self) -> List[int]:
        return sorted({height for height, _, _ in self.flagged})


def residual_bucket(value: int) -> str:
    if value <= 0:
        raise ValueError(f"Residual {value} sat is not positive")
    for name, upper in RESIDUAL_BUCKETS:
        if upper is None or value <= upper:
            return name
    raise AssertionError("unreachable")


def residual_scan(blocks: Iterable[BlockRecord]) -> ResidualScan:
    """Per-block residual totals, the transactions carrying them and a magnitude histogram."""
    scan = ResidualScan()
    for block in blocks:
        block_total = 0
        for tx in _transfers(block):
            lost = residual(tx)
            if lost > 0:
                scan.flagged.append((block.height, tx.txid, lost))
                scan.buckets[residual_bucket(lost)] += 1
                block_total += lost
        scan.per_block.append((block.height, block_total))
        scan.total += block_total
    if scan.flagged:
        logger.info(f"Residual scan: {len(scan.flagged)} tx(s) lost {scan.total} sat in total")
    return scan


def median_time_past(timestamps: Sequence[int]) -> int:
    """Median of the last (up to) 11 block times; the upper median for even counts."""
    if not timestamps:
        raise ValueError("median_time_past needs at least one timestamp")
    window = sorted(timestamps[-MTP_SPAN:])
    return window[len(window) // 2]


def median_times(blocks: Iterable[BlockRecord]) -> Iterator[Tuple[int, int, int]]:
    """Recompute median time past over a height-ordered stream.

    Yields:
        (height, recomputed, reported): Node-reported value alongside the recomputation
    """
    window: List[int] = []
    for block in blocks:
        if block.timestamp is None:
            raise ValueError(f"Block {block.height} has no timestamp")
        window = (window + [block.timestamp])[-MTP_SPAN:]
        yield block.height, median_time_past(window), block.median_time


def script_type_share(blocks: Iterable[BlockRecord], variant: str = 'inputs_outputs') -> Iterator[Tuple[int, Dict[str, float]]]:
    """Per-block fraction of each script type.

    Args:
        blocks: Block stream
        variant: 'inputs_outputs' counts spent prevouts and created outputs, 'outputs' only the latter

    Yields:
        (height, shares): Fractions summing to 1
    """
    if variant not in SHARE_VARIANTS:
        raise ValueError(f"Unknown script share variant {variant!r}")
    for block in blocks:
        counts = script_type_counts(block, include_inputs=variant == 'inputs_outputs')
        total = sum(counts.values())
        yield block.height, {st.value: (counts[st.value] / total if total else 0.0) for st in SCRIPT_TYPES}


class BlockProfiler:
    """Runs per-block statistics over a height-ordered stream with one address index."""

    def __init__(self, index_path: str, network: str = 'mainnet'):
        self.index = SeenIndex(index_path)
        self.network = network
        self.processed = 0

    def profile(self, block: BlockRecord) -> BlockStats:
        stats = per_block_stats(block, self.index, self.network)
        self.processed += 1
        return stats

    def profile_many(self, blocks: Iterable[BlockRecord]) -> Iterator[BlockStats]:
        for block in blocks:
            yield self.profile(block)

    def close(self):
        self.index.close()
        logger.debug(f"Profiler closed after {self.processed} blocks")

    def __enter__(self) -> 'BlockProfiler':
        return self

    def __exit__(self, *exc):
        self.close()
