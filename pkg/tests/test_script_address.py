import pytest
from error_handler import ParseError
from script_address import (
    SCRIPT_TYPES, ScriptBytes, ScriptId, ScriptType, address_from_script, classify_bytes, classify_script,
    derive_script_id, normalize_address,
)

GENESIS_PUBKEY = ('04678afdb0fe5548271967f1a67130b7105cd6a828e03909a67962e0ea1f61deb6'
                  '49f6bc3f4cef38c4f35504e51ec112de5c384df7ba0b8d578a4c702b6bf11d5f')
TXID = 'ab' * 32


def raw(text: str) -> bytes:
    return bytes.fromhex(text)


@pytest.mark.parametrize('script_hex, expected', [
    ('76a914' + '11' * 20 + '88ac', ScriptType.P2PKH),
    ('a914' + '22' * 20 + '87', ScriptType.P2SH),
    ('0014' + '33' * 20, ScriptType.P2WPKH),
    ('0020' + '44' * 32, ScriptType.P2WSH),
    ('5120' + '55' * 32, ScriptType.P2TR),
    ('41' + GENESIS_PUBKEY + 'ac', ScriptType.P2PK),
    ('21' + '02' + '66' * 32 + 'ac', ScriptType.P2PK),
    ('6a0401020304', ScriptType.NULL_DATA),
    ('6a', ScriptType.NULL_DATA),
    ('5202' + 'abcd', ScriptType.WITNESS_UNKNOWN),
    ('51' + '21' + '02' + '77' * 32 + '21' + '03' + '88' * 32 + '52ae', ScriptType.P2MS),
    ('', ScriptType.NON_STANDARD),
    ('ac', ScriptType.NON_STANDARD),
])
def test_classify_bytes(script_hex, expected):
    assert classify_bytes(raw(script_hex)) == expected


def test_multisig_needs_matching_key_count():
    # Declares 3 keys but carries 2
    script = '51' + '21' + '02' + '77' * 32 + '21' + '03' + '88' * 32 + '53ae'
    assert classify_bytes(raw(script)) == ScriptType.NON_STANDARD


def test_node_type_tag_wins_over_bytes():
    script = ScriptBytes(hex='ac', type_tag='pubkeyhash')
    assert classify_script(script) == ScriptType.P2PKH


def test_unknown_type_tag_falls_back_to_bytes():
    script = ScriptBytes(hex='0014' + '33' * 20, type_tag='something_new')
    assert classify_script(script) == ScriptType.P2WPKH


def test_classify_rejects_bad_hex():
    with pytest.raises(ParseError):
        classify_script(ScriptBytes(hex='zz'))


def test_script_types_cover_ten_kinds_in_fixed_order():
    assert len(SCRIPT_TYPES) == 10
    assert SCRIPT_TYPES[0] == ScriptType.P2PK
    assert SCRIPT_TYPES[-1] == ScriptType.NON_STANDARD


def test_p2pkh_address_of_genesis_key_hash():
    script = raw('76a914' + '62e907b15cbf27d5425399ebf6f0fb50ebb88f18' + '88ac')
    assert address_from_script(script) == '1A1zP1eP5QGefi2DMPTfTL5SLmv7DivfNa'


def test_segwit_addresses():
    p2wpkh = raw('0014' + '751e76e8199196d454941c45d1b3a323f1433bd6')
    assert address_from_script(p2wpkh) == 'bc1qw508d6qejxtdg4y5r3zarvary0c5xw7kv8f3t4'
    p2tr = raw('5120' + '79be667ef9dcbbac55a06295ce870b07029bfcdb2dce28d959f2815b16f81798')
    assert address_from_script(p2tr) == 'bc1p0xlxvlhemja6c4dqv22uapctqupfhlxm9h8z3k2e72q4k9hcz7vqzk5jj0'


def test_network_prefixes():
    p2sh = raw('a914' + '22' * 20 + '87')
    assert address_from_script(p2sh).startswith('3')
    assert address_from_script(p2sh, 'testnet').startswith('2')
    assert address_from_script(raw('0014' + '33' * 20), 'regtest').startswith('bcrt1q')


def test_scripts_without_address():
    assert address_from_script(raw('41' + GENESIS_PUBKEY + 'ac')) is None
    assert address_from_script(raw('6a0401020304')) is None


def test_normalize_address_lowercases_bech32_only():
    assert normalize_address('BC1QW508D6QEJXTDG4Y5R3ZARVARY0C5XW7KV8F3T4') == 'bc1qw508d6qejxtdg4y5r3zarvary0c5xw7kv8f3t4'
    assert normalize_address('1A1zP1eP5QGefi2DMPTfTL5SLmv7DivfNa') == '1A1zP1eP5QGefi2DMPTfTL5SLmv7DivfNa'


def test_derive_script_id_prefers_reported_address():
    script = ScriptBytes(hex='76a914' + '11' * 20 + '88ac', address='1ReportedAddress')
    assert derive_script_id(script, 0, TXID) == ScriptId.from_address('1ReportedAddress')


def test_derive_script_id_derives_missing_address():
    script_hex = '76a914' + '62e907b15cbf27d5425399ebf6f0fb50ebb88f18' + '88ac'
    script_id = derive_script_id(ScriptBytes(hex=script_hex), 3, TXID)
    assert script_id.is_address
    assert script_id.canonical == '1A1zP1eP5QGefi2DMPTfTL5SLmv7DivfNa'


def test_synthetic_id_for_p2pk():
    script_id = derive_script_id(ScriptBytes(hex='41' + GENESIS_PUBKEY + 'ac'), 2, TXID)
    assert not script_id.is_address
    assert script_id.canonical == f"2-{TXID}"
    assert str(script_id) == f"2-{TXID}"


def test_same_p2pk_script_in_different_outputs_is_different_nodes():
    script = ScriptBytes(hex='41' + GENESIS_PUBKEY + 'ac')
    assert derive_script_id(script, 0, TXID) != derive_script_id(script, 1, TXID)
    assert derive_script_id(script, 0, TXID) == derive_script_id(script, 0, TXID)
