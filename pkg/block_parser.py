import json
import re
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple, Union
from amounts import parse_btc
from error_handler import ParseError
from script_address import ScriptBytes
from logger import setup_logger

logger = setup_logger(__name__)

_HEX64 = re.compile(r'^[0-9a-f]{64}$')


@dataclass(frozen=True)
class TxInRecord:
    """One transaction input. Coinbase inputs carry no prevout fields."""
    is_coinbase: bool
    prev_txid: Optional[str] = None
    prev_vout_index: Optional[int] = None
    prevout_value: Optional[int] = None
    prevout_height: Optional[int] = None
    prevout_script: Optional[ScriptBytes] = None
    prevout_generated: Optional[bool] = None


@dataclass(frozen=True)
class TxOutRecord:
    value: int
    index_n: int
    script: ScriptBytes


@dataclass(frozen=True)
class TxRecord:
    txid: str
    size_bytes: int
    vsize: int
    weight_units: int
    version: str
    lock_time: int
    vin: Tuple[TxInRecord, ...]
    vout: Tuple[TxOutRecord, ...]
    fee: int = 0

    @property
    def is_coinbase(self) -> bool:
        return len(self.vin) == 1 and self.vin[0].is_coinbase

    @property
    def input_total(self) -> int:
        return sum(txin.prevout_value or 0 for txin in self.vin)

    @property
    def output_total(self) -> int:
        return sum(txout.value for txout in self.vout)


@dataclass(frozen=True)
class BlockRecord:
    """A parsed block. Amounts are satoshis."""
    height: int
    hash: str
    median_time: int
    difficulty: float
    n_tx: int
    size_bytes: int
    stripped_size_bytes: int
    weight_units: int
    txs: Tuple[TxRecord, ...]
    timestamp: Optional[int] = None

    @property
    def coinbase(self) -> TxRecord:
        return self.txs[0]

    @property
    def is_empty(self) -> bool:
        return len(self.txs) == 1


@dataclass
class ValidationReport:
    """Invariant violations found in a block; empty means valid."""
    height: int
    violations: List[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, message: str):
        self.violations.append(message)


def _require(obj: Dict[str, Any], key: str, where: str) -> Any:
    if key not in obj:
        raise ParseError(f"Missing field '{key}' in {where}")
    return obj[key]


def _as_int(value: Any, key: str, where: str) -> int:
    if isinstance(value, bool):
        raise ParseError(f"Field '{key}' in {where} is not an integer")
    try:
        return int(value)
    except (TypeError, ValueError):
        raise ParseError(f"Field '{key}' in {where} is not an integer: {value!r}")


class BlockParser:
    """Parser for the node's block JSON (REST /rest/block/<hash>.json shape)."""

    def parse(self, document: Union[bytes, str]) -> BlockRecord:
        """Parse one block document.

        Args:
            document: Raw JSON bytes or text

        Returns:
            BlockRecord: Parsed block with satoshi amounts

        Raises:
            ParseError: Malformed JSON (with byte offset) or missing fields
            ValuePrecisionError: An amount has more than 8 fractional digits
        """
        if isinstance(document, bytes):
            try:
                text = document.decode('utf-8')
            except UnicodeDecodeError as e:
                raise ParseError(f"Block document is not UTF-8: {e.reason}", offset=e.start)
        else:
            text = document

        try:
            # Decimal amounts stay strings so no float ever sees them
            data = json.loads(text, parse_float=str)
        except json.JSONDecodeError as e:
            offset = len(text[:e.pos].encode('utf-8'))
            raise ParseError(f"Malformed block JSON: {e.msg}", offset=offset)

        if not isinstance(data, dict):
            raise ParseError("Block document is not a JSON object", offset=0)
        return self.parse_object(data)

    def parse_object(self, data: Dict[str, Any]) -> BlockRecord:
        height = _as_int(_require(data, 'height', 'block'), 'height', 'block')
        where = f"block {height}"
        block_hash = str(_require(data, 'hash', where)).lower()
        raw_txs = _require(data, 'tx', where)
        if not isinstance(raw_txs, list):
            raise ParseError(f"Field 'tx' in {where} is not a list")

        txs = tuple(self._parse_tx(raw_tx, height) for raw_tx in raw_txs)

        return BlockRecord(
            height=height,
            hash=block_hash,
            median_time=_as_int(data.get('mediantime', data.get('time', 0)), 'mediantime', where),
            difficulty=float(data.get('difficulty', 0)),
            n_tx=_as_int(data.get('nTx', len(txs)), 'nTx', where),
            size_bytes=_as_int(data.get('size', 0), 'size', where),
            stripped_size_bytes=_as_int(data.get('strippedsize', data.get('size', 0)), 'strippedsize', where),
            weight_units=_as_int(data.get('weight', 0), 'weight', where),
            txs=txs,
            timestamp=_as_int(data['time'], 'time', where) if 'time' in data else None,
        )

    def _parse_script(self, raw: Dict[str, Any], where: str) -> ScriptBytes:
        address = raw.get('address')
        if address is None and raw.get('addresses'):
            # Pre-22.0 nodes report a list
            address = raw['addresses'][0] if len(raw['addresses']) == 1 else None
        return ScriptBytes(
            hex=str(_require(raw, 'hex', where)).lower(),
            address=address,
            type_tag=raw.get('type'),
        )

    def _parse_tx(self, raw: Dict[str, Any], height: int) -> TxRecord:
        txid = str(_require(raw, 'txid', f"block {height} tx")).lower()
        where = f"tx {txid} of block {height}"

        vin = []
        for position, raw_in in enumerate(_require(raw, 'vin', where)):
            if 'coinbase' in raw_in:
                vin.append(TxInRecord(is_coinbase=True))
                continue
            in_where = f"vin[{position}] of {where}"
            prevout = raw_in.get('prevout')
            if prevout is None:
                raise ParseError(f"Missing 'prevout' in {in_where}; the node must serve blocks with prevouts (txindex=1)")
            vin.append(TxInRecord(
                is_coinbase=False,
                prev_txid=str(_require(raw_in, 'txid', in_where)).lower(),
                prev_vout_index=_as_int(_require(raw_in, 'vout', in_where), 'vout', in_where),
                prevout_value=parse_btc(_require(prevout, 'value', in_where)),
                prevout_height=_as_int(_require(prevout, 'height', in_where), 'height', in_where),
                prevout_script=self._parse_script(_require(prevout, 'scriptPubKey', in_where), in_where),
                prevout_generated=bool(prevout.get('generated', False)),
            ))

        vout = []
        for position, raw_out in enumerate(_require(raw, 'vout', where)):
            out_where = f"vout[{position}] of {where}"
            vout.append(TxOutRecord(
                value=parse_btc(_require(raw_out, 'value', out_where)),
                index_n=_as_int(raw_out.get('n', position), 'n', out_where),
                script=self._parse_script(_require(raw_out, 'scriptPubKey', out_where), out_where),
            ))

        is_coinbase = len(vin) == 1 and vin[0].is_coinbase
        if is_coinbase:
            fee = 0
        elif 'fee' in raw:
            fee = parse_btc(raw['fee'])
        else:
            fee = sum(txin.prevout_value or 0 for txin in vin) - sum(txout.value for txout in vout)

        return TxRecord(
            txid=txid,
            size_bytes=_as_int(raw.get('size', 0), 'size', where),
            vsize=_as_int(raw.get('vsize', raw.get('size', 0)), 'vsize', where),
            weight_units=_as_int(raw.get('weight', 0), 'weight', where),
            version=str(raw.get('version', '')),
            lock_time=_as_int(raw.get('locktime', 0), 'locktime', where),
            vin=tuple(vin),
            vout=tuple(vout),
            fee=fee,
        )


def validate_block(block: BlockRecord) -> ValidationReport:
    """Check a block against the record invariants.

    Args:
        block: Parsed block

    Returns:
        ValidationReport: One message per violation
    """
    report = ValidationReport(height=block.height)

    if block.height < 0:
        report.add(f"negative height {block.height}")
    if not _HEX64.match(block.hash):
        report.add(f"malformed block hash {block.hash!r}")
    if len(block.txs) != block.n_tx:
        report.add(f"tx count mismatch: n_tx={block.n_tx}, parsed {len(block.txs)}")
    if not block.txs:
        report.add("block has no transactions")
        return report

    if not block.txs[0].is_coinbase:
        report.add("coinbase not first")

    for position, tx in enumerate(block.txs):
        label = f"tx {tx.txid} (index {position})"
        if not _HEX64.match(tx.txid):
            report.add(f"{label}: malformed txid")
        if not tx.vin:
            report.add(f"{label}: empty vin")
        if not tx.vout:
            report.add(f"{label}: empty vout")

        coinbase_inputs = sum(1 for txin in tx.vin if txin.is_coinbase)
        if position > 0 and coinbase_inputs:
            report.add(f"{label}: coinbase input outside first transaction")
        if coinbase_inputs and len(tx.vin) != 1:
            report.add(f"{label}: coinbase transaction must have exactly one input")

        for expected, txout in enumerate(tx.vout):
            if txout.index_n != expected:
                report.add(f"{label}: vout index {txout.index_n} at position {expected}")
            if txout.value < 0:
                report.add(f"{label}: negative output value at vout {expected}")

        if not tx.is_coinbase and not coinbase_inputs:
            if tx.fee < 0:
                report.add(f"{label}: negative fee")
            residual = tx.input_total - tx.output_total - tx.fee
            if residual < 0:
                report.add(f"{label}: negative residual ({residual} sat)")
            for txin in tx.vin:
                if txin.prevout_height is not None and txin.prevout_height > block.height:
                    report.add(f"{label}: spends output from future height {txin.prevout_height}")

    return report


# Global parser instance
block_parser = BlockParser()
