from collections import OrderedDict
from typing import Any, Dict, List, Tuple
from block_parser import BlockRecord, TxRecord, validate_block
from error_handler import BlockGraphError, DegenerateTransactionError, InvariantViolationError
from graph_model import BlockGraph, EdgeRecord, EdgeType, NodeKind, NodeRef
from script_address import ScriptBytes, classify_script, derive_script_id
from value_split import (
    ValueSplitConfig, block_subsidy, fee_edge_value, mint_edge_value, transfer_edge_value,
)
from logger import setup_logger

logger = setup_logger(__name__)

# (script node, value) of one spent input or one created output
ScriptLeg = Tuple[NodeRef, int]


def block_properties(block: BlockRecord) -> Dict[str, Any]:
    return {
        'height': block.height,
        'median_time': block.median_time,
        'difficulty': block.difficulty,
        'n_tx': block.n_tx,
        'size': block.size_bytes,
        'stripped_size': block.stripped_size_bytes,
        'weight': block.weight_units,
    }


def tx_properties(tx: TxRecord) -> Dict[str, Any]:
    return {
        'txid': tx.txid,
        'size': tx.size_bytes,
        'vsize': tx.vsize,
        'weight': tx.weight_units,
        'version': tx.version,
        'lock_time': tx.lock_time,
    }


def is_excluded(tx: TxRecord, cfg: ValueSplitConfig) -> bool:
    """True when a transaction contributes nothing to the graph.

    A tx is skipped when it has more inputs AND more outputs than the
    threshold, or (with skip_zero_value) when every output is worth 0.
    """
    threshold = cfg.max_inout_threshold
    if len(tx.vin) > threshold and len(tx.vout) > threshold:
        return True
    if cfg.skip_zero_value and all(txout.value == 0 for txout in tx.vout):
        return True
    return False


class _GraphAssembler:
    """Accumulates one block's nodes and edges, mirroring context edges."""

    def __init__(self, block: BlockRecord, cfg: ValueSplitConfig, network: str):
        self.block = block
        self.cfg = cfg
        self.network = network
        self.graph = BlockGraph(height=block.height)
        self.block_ref = NodeRef.block(block.height)

    def script_node(self, script: ScriptBytes, out_index: int, txid: str) -> NodeRef:
        script_id = derive_script_id(script, out_index, txid, self.network)
        ref = NodeRef.script(script_id)
        self.graph.add_node(ref, {
            'script_id': script_id.canonical,
            'script_type': classify_script(script).value,
        })
        return ref

    def edge(self, src: NodeRef, edge_type: EdgeType, dst: NodeRef, value: int):
        self.graph.add_edge(EdgeRecord(src, dst, edge_type, value, self.block.height))

    def flow(self, src: NodeRef, edge_type: EdgeType, dst: NodeRef, value: int):
        """Transfers/Fee edge plus its Redeems and Credits/Confirms mirrors."""
        self.edge(src, edge_type, dst, value)
        self.edge(src, EdgeType.REDEEMS, self.block_ref, value)
        mirror = EdgeType.CREDITS if dst.kind == NodeKind.SCRIPT else EdgeType.CONFIRMS
        self.edge(self.block_ref, mirror, dst, value)


def build_block_graph(block: BlockRecord, cfg: ValueSplitConfig = ValueSplitConfig(),
                      network: str = 'mainnet') -> BlockGraph:
    """Turn one block into its graph.

    Args:
        block: Validated block record
        cfg: Value split and exclusion settings
        network: Address encoding network for derived script IDs

    Returns:
        BlockGraph: Nodes defined by the block and its edge multiset

    Raises:
        InvariantViolationError: The block fails validation
        ValueSplitError: A value formula failed (message carries height and txid)
    """
    report = validate_block(block)
    if not report.ok:
        raise InvariantViolationError(f"Block {block.height} is invalid: {'; '.join(report.violations)}")

    asm = _GraphAssembler(block, cfg, network)
    graph = asm.graph
    height = block.height

    graph.add_node(asm.block_ref, block_properties(block))
    coinbase = NodeRef.coinbase()
    graph.add_node(coinbase)

    coinbase_tx = block.coinbase
    coinbase_ref = NodeRef.tx(coinbase_tx.txid)
    graph.add_node(coinbase_ref, tx_properties(coinbase_tx))

    claimed = coinbase_tx.output_total
    # Excluded txs still paid their fee on-chain
    fee_total = sum(tx.fee for tx in block.txs[1:])
    minted = max(0, min(block_subsidy(height), claimed - fee_total))

    asm.edge(coinbase, EdgeType.MINTS, coinbase_ref, minted)

    miner_legs: List[ScriptLeg] = []
    if claimed > 0:
        try:
            for txout in coinbase_tx.vout:
                ref = asm.script_node(txout.script, txout.index_n, coinbase_tx.txid)
                miner_legs.append((ref, txout.value))
                asm.edge(coinbase, EdgeType.MINTS, ref, mint_edge_value(minted, txout.value, claimed))
        except BlockGraphError as e:
            raise _with_context(e, height, coinbase_tx.txid)
    else:
        logger.info(f"Block {height}: coinbase claims nothing, no Mints edges to scripts and no Fee edges")

    excluded = 0
    for tx in block.txs[1:]:
        if is_excluded(tx, cfg):
            excluded += 1
            logger.debug(f"Block {height}: skipping tx {tx.txid} ({len(tx.vin)} in / {len(tx.vout)} out)")
            continue
        try:
            _add_transaction(asm, tx, coinbase_ref, miner_legs, claimed)
        except BlockGraphError as e:
            raise _with_context(e, height, tx.txid)

    if excluded:
        logger.debug(f"Block {height}: {excluded} transaction(s) excluded")
    return graph


def _add_transaction(asm: _GraphAssembler, tx: TxRecord, coinbase_ref: NodeRef,
                     miner_legs: List[ScriptLeg], claimed: int):
    graph = asm.graph
    tx_ref = NodeRef.tx(tx.txid)
    graph.add_node(tx_ref, tx_properties(tx))

    input_legs: List[ScriptLeg] = [
        (asm.script_node(txin.prevout_script, txin.prev_vout_index, txin.prev_txid), txin.prevout_value)
        for txin in tx.vin
    ]
    output_legs: List[ScriptLeg] = [
        (asm.script_node(txout.script, txout.index_n, tx.txid), txout.value)
        for txout in tx.vout
    ]

    # Tx level: one edge per spent output, or one per producing tx when aggregating
    producers: List[Tuple[str, int]]
    if asm.cfg.aggregate_tx_inputs:
        summed: Dict[str, int] = OrderedDict()
        for txin in tx.vin:
            summed[txin.prev_txid] = summed.get(txin.prev_txid, 0) + txin.prevout_value
        producers = list(summed.items())
    else:
        producers = [(txin.prev_txid, txin.prevout_value) for txin in tx.vin]

    for prev_txid, value in producers:
        producer_ref = NodeRef.tx(prev_txid)
        graph.add_external(producer_ref)
        asm.flow(producer_ref, EdgeType.TRANSFERS, tx_ref, value)

    # Script level: complete input x output bipartite
    sum_inputs = tx.input_total
    try:
        values = [
            [transfer_edge_value(v_value, u_value, sum_inputs, tx.fee, asm.cfg) for _, v_value in output_legs]
            for _, u_value in input_legs
        ]
    except DegenerateTransactionError as e:
        logger.warning(f"Block {asm.block.height} tx {tx.txid}: script transfer edges skipped: {e}")
        values = None

    if values is not None:
        for (u_ref, _), row in zip(input_legs, values):
            for (v_ref, _), value in zip(output_legs, row):
                asm.flow(u_ref, EdgeType.TRANSFERS, v_ref, value)

    if tx.fee <= 0 or claimed <= 0:
        return

    asm.flow(tx_ref, EdgeType.FEE, coinbase_ref, tx.fee)
    for u_ref, u_value in input_legs:
        for v_ref, v_value in miner_legs:
            asm.flow(u_ref, EdgeType.FEE, v_ref, fee_edge_value(tx.fee, u_value, sum_inputs, v_value, claimed))


def _with_context(error: BlockGraphError, height: int, txid: str) -> BlockGraphError:
    if getattr(error, 'height', None) is not None:
        return error
    wrapped = type(error)(f"block {height} tx {txid}: {error}")
    wrapped.height = height
    wrapped.txid = txid
    wrapped.__cause__ = error
    return wrapped


def build_many(blocks: List[BlockRecord], cfg: ValueSplitConfig, network: str) -> List[BlockGraph]:
    """Build several blocks; the unit of work handed to worker processes."""
    return [build_block_graph(block, cfg, network) for block in blocks]
