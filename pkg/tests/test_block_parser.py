import json
import pytest
from block_parser import block_parser, validate_block
from error_handler import ParseError, ValuePrecisionError
from chain_factory import to_bytes

F8B = 'f8b9767e487c55d9abb336c49679519001648b0df83f832a36d567fd8dbf7f47'


def test_parse_block_2817(block_2817):
    assert block_2817.height == 2817
    assert block_2817.hash == '00000000d50a3cd05e451166e5f618c76cc3273104608fe424835ae5c0d47db9'
    assert block_2817.median_time == 1232669826
    assert block_2817.timestamp == 1232672421
    assert block_2817.n_tx == 4
    assert len(block_2817.txs) == 4
    assert block_2817.coinbase.is_coinbase
    assert block_2817.coinbase.output_total == 5_201_000_000
    assert not block_2817.is_empty


def test_amounts_are_exact_satoshis(block_2817):
    f8b = block_2817.txs[1]
    assert f8b.txid == F8B
    assert f8b.vin[0].prevout_value == 3_493_000_000
    assert [out.value for out in f8b.vout] == [100_000_000, 3_293_000_000]
    assert f8b.fee == 100_000_000
    assert f8b.vin[0].prevout_height == 2813
    assert f8b.vin[0].prevout_generated is False


def test_scripts_keep_address_and_type(block_2817):
    f8b = block_2817.txs[1]
    assert f8b.vout[1].script.address == '1AbHNFdKJeVL8FRZyRZoiTzG9VCmzLrtvm'
    assert f8b.vout[1].script.type_tag == 'pubkeyhash'
    assert f8b.vout[0].script.address is None


def test_block_2817_is_valid(block_2817):
    report = validate_block(block_2817)
    assert report.ok, report.violations


def test_malformed_json_reports_byte_offset():
    with pytest.raises(ParseError) as excinfo:
        block_parser.parse(b'{"height": 1, "hash": ')
    assert excinfo.value.offset is not None
    assert excinfo.value.offset > 0


def test_non_utf8_document():
    with pytest.raises(ParseError):
        block_parser.parse(b'{"height": \xff}')


def test_missing_prevout_is_a_parse_error(factory):
    document = factory.blocks(3)[-1]
    document = json.loads(json.dumps(document))
    document['tx'].append({'txid': 'cd' * 32, 'vin': [{'txid': 'ef' * 32, 'vout': 0}], 'vout': []})
    with pytest.raises(ParseError, match='prevout'):
        block_parser.parse(to_bytes(document))


def test_nine_decimal_amount_is_rejected(block_2817_bytes):
    text = block_2817_bytes.decode().replace('"value": 52.01', '"value": 52.010000001', 1)
    with pytest.raises(ValuePrecisionError):
        block_parser.parse(text)


def test_missing_fee_is_derived(block_2817_bytes):
    document = json.loads(block_2817_bytes)
    for tx in document['tx']:
        tx.pop('fee', None)
    block = block_parser.parse(to_bytes(document))
    assert [tx.fee for tx in block.txs] == [0, 100_000_000, 100_000_000, 1_000_000]


def test_legacy_addresses_list(block_2817_bytes):
    document = json.loads(block_2817_bytes)
    script = document['tx'][1]['vout'][1]['scriptPubKey']
    script['addresses'] = [script.pop('address')]
    block = block_parser.parse(to_bytes(document))
    assert block.txs[1].vout[1].script.address == '1AbHNFdKJeVL8FRZyRZoiTzG9VCmzLrtvm'


def test_validation_flags_broken_blocks(block_2817_bytes):
    document = json.loads(block_2817_bytes)
    document['nTx'] = 5
    document['tx'][1]['vout'][0]['n'] = 7
    document['tx'][1]['fee'] = 40.0
    report = validate_block(block_parser.parse(to_bytes(document)))
    assert not report.ok
    text = ' | '.join(report.violations)
    assert 'tx count mismatch' in text
    assert 'vout index 7' in text
    assert 'negative residual' in text


def test_validation_flags_coinbase_not_first(block_2817_bytes):
    document = json.loads(block_2817_bytes)
    document['tx'] = document['tx'][1:] + document['tx'][:1]
    report = validate_block(block_parser.parse(to_bytes(document)))
    assert any('coinbase' in violation for violation in report.violations)


def test_synthetic_chain_blocks_validate(factory):
    for document in factory.blocks(30):
        block = block_parser.parse(to_bytes(document))
        assert validate_block(block).ok
