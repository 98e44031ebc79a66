import json
import math
from collections import Counter
from fractions import Fraction
import pytest
from amounts import block_subsidy, parse_btc
from block_parser import block_parser
from block_profiler import minted_amount, unclaimed_reward
from graph_builder import build_block_graph, is_excluded
from graph_model import EdgeType, NodeKind, NodeRef, check_pattern
from script_address import ScriptBytes, address_from_script, derive_script_id
from value_split import CONSERVING, ValueSplitConfig, fee_edge_value, transfer_edge_value
from chain_factory import ChainFactory, btc, to_bytes
from conftest import parse_blocks

E95 = 'e95d451f311f8c0c7d564adcbaada5d8a936d85f1e7daf7844474b96baebe7b0'
F8B = 'f8b9767e487c55d9abb336c49679519001648b0df83f832a36d567fd8dbf7f47'
T65F = '65f1a6031795c77ece9d827211bb77eb979f06535de35a8eb29af2ca2cd3530d'
T5B6 = '5b657d4c9eda2f1c8904a5f682687dc8885f772420350b13550c6500e20d34c4'
A87 = 'a87af6ef58a4d11440053774dd0552a45b9d9a6ad849723bac143c449e9a3c29'

P2PK = NodeRef(NodeKind.SCRIPT, f"0-{E95}")
S1 = NodeRef(NodeKind.SCRIPT, '1AbHNFdKJeVL8FRZyRZoiTzG9VCmzLrtvm')
S2 = NodeRef(NodeKind.SCRIPT, address_from_script(bytes.fromhex('76a914' + '11' * 20 + '88ac')))
COINBASE = NodeRef.coinbase()


def tx(txid):
    return NodeRef.tx(txid)


def edge_values(graph, edge_type, src_kind=None):
    found = Counter()
    for edge in graph.edges_of(edge_type):
        if src_kind is None or edge.src.kind == src_kind:
            found[(edge.src, edge.dst, edge.value)] += 1
    return found


def test_nodes_of_block_2817(graph_2817):
    counts = Counter(ref.kind for ref in graph_2817.nodes)
    assert counts == {NodeKind.TX: 4, NodeKind.SCRIPT: 3, NodeKind.BLOCK: 1, NodeKind.COINBASE: 1}
    assert set(graph_2817.external_refs) == {tx(A87)}
    assert graph_2817.nodes[P2PK] == {'script_id': f"0-{E95}", 'script_type': 'P2PK'}
    assert graph_2817.nodes[S1]['script_type'] == 'P2PKH'
    assert graph_2817.nodes[NodeRef.block(2817)]['n_tx'] == 4
    assert not graph_2817.dangling_endpoints()


def test_mints_of_block_2817(graph_2817):
    assert edge_values(graph_2817, EdgeType.MINTS) == Counter({
        (COINBASE, tx(E95), 5_000_000_000): 1,
        (COINBASE, P2PK, 5_000_000_000): 1,
    })


def test_fee_edges_of_block_2817(graph_2817):
    assert edge_values(graph_2817, EdgeType.FEE, NodeKind.TX) == Counter({
        (tx(F8B), tx(E95), 100_000_000): 1,
        (tx(T65F), tx(E95), 100_000_000): 1,
        (tx(T5B6), tx(E95), 1_000_000): 1,
    })
    assert edge_values(graph_2817, EdgeType.FEE, NodeKind.SCRIPT) == Counter({
        (S1, P2PK, 100_000_000): 1,
        (S2, P2PK, 2_947_244): 1,
        (S1, P2PK, 97_052_756): 1,
        (S2, P2PK, 30_367): 1,
        (S1, P2PK, 969_633): 1,
    })


def test_tx_transfers_of_block_2817(graph_2817):
    assert edge_values(graph_2817, EdgeType.TRANSFERS, NodeKind.TX) == Counter({
        (tx(A87), tx(F8B), 3_493_000_000): 1,
        (tx(F8B), tx(T65F), 100_000_000): 1,
        (tx(F8B), tx(T65F), 3_293_000_000): 1,
        (tx(T65F), tx(T5B6), 100_000_000): 1,
        (tx(T65F), tx(T5B6), 3_193_000_000): 1,
    })


def test_script_transfers_as_printed(graph_2817):
    transfers = edge_values(graph_2817, EdgeType.TRANSFERS, NodeKind.SCRIPT)
    # f8b: 34.93 in, 1.00 fee, divided by 33.93
    assert transfers[(S1, S2, 102_947_244)] == 1
    assert transfers[(S1, S1, 3_390_052_756)] == 1
    # 1x2 + 2x2 + 2x2 input/output pairs
    assert sum(transfers.values()) == 10


def test_script_transfers_conserving(block_2817):
    graph = build_block_graph(block_2817, ValueSplitConfig(transfer_denominator_mode=CONSERVING))
    transfers = edge_values(graph, EdgeType.TRANSFERS, NodeKind.SCRIPT)
    # A single input passes exactly its tx's outputs
    assert transfers[(S1, S2, 100_000_000)] == 1
    assert transfers[(S1, S1, 3_293_000_000)] == 1


def test_context_edge_counts(graph_2817):
    counts = Counter(edge.type for edge in graph_2817.edges)
    assert counts[EdgeType.TRANSFERS] == 15
    assert counts[EdgeType.FEE] == 8
    assert counts[EdgeType.REDEEMS] == 23
    assert counts[EdgeType.CONFIRMS] == 8
    assert counts[EdgeType.CREDITS] == 15
    assert all(check_pattern(edge) for edge in graph_2817.edges)
    assert all(edge.height == 2817 for edge in graph_2817.edges)


def assert_context_bijection(graph):
    block_ref = NodeRef.block(graph.height)
    expected_redeems = Counter()
    expected_mirrors = Counter()
    for edge in graph.edges:
        if edge.type in (EdgeType.TRANSFERS, EdgeType.FEE):
            expected_redeems[(edge.src, edge.value)] += 1
            mirror = EdgeType.CREDITS if edge.dst.kind == NodeKind.SCRIPT else EdgeType.CONFIRMS
            expected_mirrors[(mirror, edge.dst, edge.value)] += 1
    redeems = Counter((e.src, e.value) for e in graph.edges_of(EdgeType.REDEEMS))
    mirrors = Counter((e.type, e.dst, e.value) for e in graph.edges
                      if e.type in (EdgeType.CREDITS, EdgeType.CONFIRMS))
    assert redeems == expected_redeems
    assert mirrors == expected_mirrors
    assert all(e.dst == block_ref for e in graph.edges_of(EdgeType.REDEEMS))


def test_context_edges_mirror_block_2817(graph_2817):
    assert_context_bijection(graph_2817)


@pytest.mark.slow
def test_context_edges_mirror_random_chain():
    for block in parse_blocks(ChainFactory(seed=3).blocks(1000)):
        graph = build_block_graph(block)
        assert_context_bijection(graph)
        assert not graph.dangling_endpoints()


def block_with(factory, extra_txs):
    factory.blocks(2)
    return block_parser.parse(to_bytes(factory.next_block(n_transfers=0, extra_txs=extra_txs)))


@pytest.mark.parametrize('n_in, n_out, excluded', [(21, 21, True), (20, 21, False), (21, 20, False), (20, 20, False)])
def test_wide_transaction_exclusion(factory, n_in, n_out, excluded):
    wide = factory.wide_tx(n_in, n_out)
    block = block_with(factory, [wide])
    assert is_excluded(block.txs[-1], ValueSplitConfig()) is excluded
    graph = build_block_graph(block)
    assert (NodeRef.tx(wide['txid']) in graph.nodes) is not excluded
    fee_edges = [e for e in graph.edges_of(EdgeType.FEE) if e.src == NodeRef.tx(wide['txid'])]
    assert len(fee_edges) == (0 if excluded else 1)


def test_excluded_fee_still_counts_toward_minted(factory):
    factory.blocks(2)
    wide = factory.wide_tx(21, 21, fee=5_000)
    document = json.loads(to_bytes(factory.next_block(n_transfers=0, extra_txs=[wide])))
    subsidy = block_subsidy(document['height'])
    # Miner claims the subsidy only, so the excluded fee must come out of it
    document['tx'][0]['vout'] = [dict(document['tx'][0]['vout'][0], value=btc(subsidy))]
    graph = build_block_graph(block_parser.parse(to_bytes(document)))
    mint = next(e for e in graph.edges_of(EdgeType.MINTS) if e.dst.kind == NodeKind.TX)
    assert mint.value == subsidy - 5_000


def test_zero_value_transaction_is_skipped(factory):
    wide = factory.wide_tx(1, 1, value=1_000, fee=1_000)
    block = block_with(factory, [wide])
    assert is_excluded(block.txs[-1], ValueSplitConfig())
    assert not is_excluded(block.txs[-1], ValueSplitConfig(skip_zero_value=False))


def test_degenerate_transaction_keeps_tx_level_edges(factory):
    wide = factory.wide_tx(1, 1, value=1_000, fee=1_000)
    block = block_with(factory, [wide])
    graph = build_block_graph(block, ValueSplitConfig(skip_zero_value=False))
    wide_ref = NodeRef.tx(wide['txid'])
    assert any(e.dst == wide_ref for e in graph.edges_of(EdgeType.TRANSFERS))
    assert any(e.src == wide_ref for e in graph.edges_of(EdgeType.FEE))


def claim_block(factory, claim_offset=None, claim=None, height=None):
    factory.blocks(4)
    document = json.loads(to_bytes(factory.next_block(n_transfers=2)))
    if height is not None:
        document['height'] = height
    fees = sum(record.fee for record in block_parser.parse(to_bytes(document)).txs[1:])
    subsidy = block_subsidy(document['height'])
    value = claim if claim is not None else subsidy + fees + claim_offset
    coinbase = document['tx'][0]
    coinbase['vout'] = coinbase['vout'][:1]
    coinbase['vout'][0]['value'] = btc(value)
    return block_parser.parse(to_bytes(document)), fees, subsidy


@pytest.mark.parametrize('offset, minted_from', [
    (0, lambda fees, subsidy: subsidy),
    (-1_000, lambda fees, subsidy: subsidy - 1_000),
    (5_000, lambda fees, subsidy: subsidy),
])
def test_minted_amount_under_and_over_claim(offset, minted_from):
    block, fees, subsidy = claim_block(ChainFactory(seed=21), claim_offset=offset)
    graph = build_block_graph(block)
    mint = next(e for e in graph.edges_of(EdgeType.MINTS) if e.dst.kind == NodeKind.TX)
    assert mint.value == minted_from(fees, subsidy)


def test_claim_below_fees_mints_nothing():
    factory = ChainFactory(seed=22)
    block, fees, subsidy = claim_block(factory, claim_offset=0)
    if fees < 2:
        pytest.skip('seeded block carries no fees')
    block, fees, _ = claim_block(ChainFactory(seed=22), claim=fees - 1)
    graph = build_block_graph(block)
    assert [e.value for e in graph.edges_of(EdgeType.MINTS)] == [0, 0]


def test_unclaimed_block_like_501726_mints_zero():
    block, fees, _ = claim_block(ChainFactory(seed=23), claim=0, height=501_726)
    graph = build_block_graph(block)
    mints = graph.edges_of(EdgeType.MINTS)
    assert [(e.dst.kind, e.value) for e in mints] == [(NodeKind.TX, 0)]
    assert not graph.edges_of(EdgeType.FEE)


@pytest.mark.parametrize('height, claimed_minted', [
    (124_724, '49.98999999'),
    (162_839, '49.989752'),
    (164_246, '48.24219931'),
    (214_251, '24.995'),
    (370_002, '24.99999999'),
    (501_726, '0.0'),
    (530_371, '12.49994556'),
    (626_205, '12.49999932'),
])
def test_underclaimed_mainnet_blocks(height, claimed_minted):
    minted = parse_btc(claimed_minted)
    block, fees, subsidy = claim_block(ChainFactory(seed=24), claim_offset=minted - block_subsidy(height),
                                       height=height)
    assert subsidy == block_subsidy(height)
    assert block.coinbase.output_total == minted + fees
    assert minted_amount(block) == minted
    assert unclaimed_reward(block) == subsidy - minted

    graph = build_block_graph(block)
    mint = next(e for e in graph.edges_of(EdgeType.MINTS) if e.dst.kind == NodeKind.TX)
    assert mint.value == minted
    assert sum(e.value for e in graph.edges_of(EdgeType.MINTS) if e.dst.kind == NodeKind.SCRIPT) == minted


def test_aggregate_tx_inputs(block_2817):
    graph = build_block_graph(block_2817, ValueSplitConfig(aggregate_tx_inputs=True))
    assert edge_values(graph, EdgeType.TRANSFERS, NodeKind.TX) == Counter({
        (tx(A87), tx(F8B), 3_493_000_000): 1,
        (tx(F8B), tx(T65F), 3_393_000_000): 1,
        (tx(T65F), tx(T5B6), 3_293_000_000): 1,
    })


def test_conserving_split_sums_to_each_output():
    for block in parse_blocks(ChainFactory(seed=5).blocks(60)):
        for tx_record in block.txs[1:]:
            sum_inputs = tx_record.input_total
            for txout in tx_record.vout:
                shares = [transfer_edge_value(txout.value, txin.prevout_value, sum_inputs, tx_record.fee,
                                              ValueSplitConfig(transfer_denominator_mode=CONSERVING))
                          for txin in tx_record.vin]
                assert abs(sum(shares) - txout.value) <= len(shares) / 2


def test_as_printed_split_returns_each_input_without_residual():
    for block in parse_blocks(ChainFactory(seed=6).blocks(60)):
        for tx_record in block.txs[1:]:
            sum_inputs = tx_record.input_total
            if sum_inputs - tx_record.fee <= 0:
                continue
            for txin in tx_record.vin:
                shares = [transfer_edge_value(txout.value, txin.prevout_value, sum_inputs, tx_record.fee)
                          for txout in tx_record.vout]
                assert abs(sum(shares) - txin.prevout_value) <= len(shares) / 2


def nearest_half_up(x):
    """Round an exact rational to the nearest integer, ties away from zero."""
    whole = math.floor(abs(x) + Fraction(1, 2))
    return whole if x >= 0 else -whole


def test_fee_edge_rounding_on_small_amounts():
    for tx_fee in range(0, 6):
        for total_in in range(1, 7):
            for u_value in range(1, total_in + 1):
                for paid_to_miner in range(1, 6):
                    for v_value in range(1, paid_to_miner + 1):
                        exact = Fraction(tx_fee * u_value, total_in) * Fraction(v_value, paid_to_miner)
                        value = fee_edge_value(tx_fee, u_value, total_in, v_value, paid_to_miner)
                        assert value == nearest_half_up(exact), (tx_fee, u_value, total_in, v_value, paid_to_miner)


def test_transfer_edge_rounding_on_small_amounts():
    conserving = ValueSplitConfig(transfer_denominator_mode=CONSERVING)
    for sum_inputs in range(1, 8):
        for fee in range(0, sum_inputs):
            for u_value in range(1, sum_inputs + 1):
                for v_value in range(0, sum_inputs - fee + 1):
                    printed = Fraction(v_value * u_value, sum_inputs - fee)
                    assert transfer_edge_value(v_value, u_value, sum_inputs, fee) == nearest_half_up(printed)
                    kept = Fraction(v_value * u_value, sum_inputs)
                    assert transfer_edge_value(v_value, u_value, sum_inputs, fee, conserving) == nearest_half_up(kept)


def test_same_block_spend_reuses_defined_tx_node(graph_2817):
    assert tx(F8B) in graph_2817.nodes
    assert tx(F8B) not in graph_2817.external_refs


def test_script_node_ids_use_derived_address(block_2817):
    s2 = block_2817.txs[1].vout[0].script
    assert isinstance(s2, ScriptBytes)
    assert s2.address is None
    assert S2.ident.startswith('1')


def script_legs(block):
    """(script, output index, producing txid) for every output and every spent prevout."""
    for tx in block.txs:
        for txout in tx.vout:
            yield txout.script, txout.index_n, tx.txid
        for txin in tx.vin:
            if not txin.is_coinbase:
                yield txin.prevout_script, txin.prev_vout_index, txin.prev_txid


def test_reused_addresses_share_one_script_node(block_2817, graph_2817):
    legs = list(script_legs(block_2817))
    per_output = {(txid, index) for _, index, txid in legs}
    address_keyed = {derive_script_id(script, index, txid).canonical for script, index, txid in legs}
    scripts = {ref.ident for ref in graph_2817.nodes if ref.kind == NodeKind.SCRIPT}
    assert scripts == address_keyed
    assert len(scripts) == 3
    assert len(scripts) < len(per_output)


@pytest.mark.parametrize('seed', range(5))
def test_script_node_count_on_random_blocks(seed):
    for block in parse_blocks(ChainFactory(seed=seed, reuse_probability=0.6).blocks(15)):
        legs = list(script_legs(block))
        graph = build_block_graph(block)
        scripts = {ref.ident for ref in graph.nodes if ref.kind == NodeKind.SCRIPT}
        assert scripts == {derive_script_id(script, index, txid).canonical for script, index, txid in legs}
        assert len(scripts) <= len({(txid, index) for _, index, txid in legs})


@pytest.mark.slow
def test_conservation_over_ten_thousand_transactions():
    factory = ChainFactory(seed=31, max_inputs=4, max_outputs=4)
    conserving = ValueSplitConfig(transfer_denominator_mode=CONSERVING)
    checked = 0
    for document in (factory.next_block(n_transfers=3) for _ in range(3600)):
        block = block_parser.parse(to_bytes(document))
        graph = build_block_graph(block, conserving)
        paid_to_miner = sum(txout.value for txout in block.txs[0].vout)
        inflow = Counter()
        for edge in graph.edges_of(EdgeType.TRANSFERS):
            if edge.src.kind == NodeKind.TX:
                inflow[edge.dst] += edge.value
        for tx_record in block.txs[1:]:
            total_in = tx_record.input_total
            fees = [fee_edge_value(tx_record.fee, txin.prevout_value, total_in, txout.value, paid_to_miner)
                    for txin in tx_record.vin for txout in block.txs[0].vout]
            assert abs(sum(fees) - tx_record.fee) <= len(fees)
            transfers = [transfer_edge_value(txout.value, txin.prevout_value, total_in, tx_record.fee, conserving)
                         for txin in tx_record.vin for txout in tx_record.vout]
            assert abs(sum(transfers) - sum(txout.value for txout in tx_record.vout)) <= len(transfers)
            assert inflow[tx(tx_record.txid)] == total_in
            checked += 1
    assert checked >= 10_000
