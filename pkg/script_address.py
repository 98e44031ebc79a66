"""Locking-script classification and script node identity."""
from dataclasses import dataclass
from enum import Enum
from typing import Optional
import base58
import bech32
from error_handler import ParseError


class ScriptType(str, Enum):
    P2PK = 'P2PK'
    P2PKH = 'P2PKH'
    P2SH = 'P2SH'
    P2WPKH = 'P2WPKH'
    P2WSH = 'P2WSH'
    P2TR = 'P2TR'
    P2MS = 'P2MS'
    NULL_DATA = 'NullData'
    WITNESS_UNKNOWN = 'Witness-unknown'
    NON_STANDARD = 'NonStandard'


# Fixed order used by feature vectors and stats columns
SCRIPT_TYPES = tuple(ScriptType)

# Bitcoin Core's scriptPubKey "type" strings
NODE_TYPE_TAGS = {
    'pubkey': ScriptType.P2PK,
    'pubkeyhash': ScriptType.P2PKH,
    'scripthash': ScriptType.P2SH,
    'witness_v0_keyhash': ScriptType.P2WPKH,
    'witness_v0_scripthash': ScriptType.P2WSH,
    'witness_v1_taproot': ScriptType.P2TR,
    'multisig': ScriptType.P2MS,
    'nulldata': ScriptType.NULL_DATA,
    'witness_unknown': ScriptType.WITNESS_UNKNOWN,
    'anchor': ScriptType.WITNESS_UNKNOWN,
    'nonstandard': ScriptType.NON_STANDARD,
}

NETWORKS = {
    'mainnet': {'p2pkh': b'\x00', 'p2sh': b'\x05', 'hrp': 'bc'},
    'testnet': {'p2pkh': b'\x6f', 'p2sh': b'\xc4', 'hrp': 'tb'},
    'regtest': {'p2pkh': b'\x6f', 'p2sh': b'\xc4', 'hrp': 'bcrt'},
}

OP_0 = 0x00
OP_1 = 0x51
OP_16 = 0x60
OP_RETURN = 0x6a
OP_CHECKMULTISIG = 0xae


@dataclass(frozen=True)
class ScriptBytes:
    """A locking script as the node reports it."""
    hex: str
    address: Optional[str] = None
    type_tag: Optional[str] = None

    def raw(self) -> bytes:
        try:
            return bytes.fromhex(self.hex)
        except ValueError as e:
            raise ParseError(f"Undecodable script hex {self.hex[:32]!r}: {e}")


@dataclass(frozen=True)
class ScriptId:
    """Identity of a Script node: an address, or "{out_index}-{txid}" when none exists."""
    kind: str
    address: Optional[str] = None
    out_index: Optional[int] = None
    txid: Optional[str] = None

    ADDRESS = 'Address'
    SYNTHETIC = 'Synthetic'

    @classmethod
    def from_address(cls, address: str) -> 'ScriptId':
        return cls(kind=cls.ADDRESS, address=address)

    @classmethod
    def synthetic(cls, out_index: int, txid: str) -> 'ScriptId':
        return cls(kind=cls.SYNTHETIC, out_index=out_index, txid=txid)

    @property
    def canonical(self) -> str:
        if self.kind == self.ADDRESS:
            return self.address
        return f"{self.out_index}-{self.txid}"

    @property
    def is_address(self) -> bool:
        return self.kind == self.ADDRESS

    def __eq__(self, other) -> bool:
        return isinstance(other, ScriptId) and self.canonical == other.canonical

    def __hash__(self) -> int:
        return hash(self.canonical)

    def __str__(self) -> str:
        return self.canonical


def _is_multisig(raw: bytes) -> bool:
    if len(raw) < 3 or raw[-1] != OP_CHECKMULTISIG:
        return False
    m, n = raw[0], raw[-2]
    if not (OP_1 <= m <= OP_16 and OP_1 <= n <= OP_16 and m <= n):
        return False
    pos, keys = 1, 0
    while pos < len(raw) - 2:
        size = raw[pos]
        if size not in (33, 65):
            return False
        pos += 1 + size
        keys += 1
    return pos == len(raw) - 2 and keys == n - OP_1 + 1


def classify_bytes(raw: bytes) -> ScriptType:
    """Pattern-match a locking script's bytes to a script type."""
    size = len(raw)
    if size == 25 and raw[:3] == b'\x76\xa9\x14' and raw[23:] == b'\x88\xac':
        return ScriptType.P2PKH
    if size == 23 and raw[:2] == b'\xa9\x14' and raw[22] == 0x87:
        return ScriptType.P2SH
    if size == 22 and raw[:2] == b'\x00\x14':
        return ScriptType.P2WPKH
    if size == 34 and raw[:2] == b'\x00\x20':
        return ScriptType.P2WSH
    if size == 34 and raw[:2] == b'\x51\x20':
        return ScriptType.P2TR
    if (size == 35 and raw[0] == 33 and raw[-1] == 0xac) or (size == 67 and raw[0] == 65 and raw[-1] == 0xac):
        return ScriptType.P2PK
    if size >= 1 and raw[0] == OP_RETURN:
        return ScriptType.NULL_DATA
    # Witness programs of versions 1..16 other than taproot
    if 4 <= size <= 42 and OP_1 <= raw[0] <= OP_16 and raw[1] == size - 2:
        return ScriptType.WITNESS_UNKNOWN
    if _is_multisig(raw):
        return ScriptType.P2MS
    return ScriptType.NON_STANDARD


def classify_script(script: ScriptBytes) -> ScriptType:
    """Assign exactly one script type.

    The node's type string wins when it is one we know; otherwise the
    bytes are pattern-matched.

    Raises:
        ParseError: The hex is not decodable
    """
    raw = script.raw()
    if script.type_tag and script.type_tag in NODE_TYPE_TAGS:
        return NODE_TYPE_TAGS[script.type_tag]
    return classify_bytes(raw)


def address_from_script(raw: bytes, network: str = 'mainnet') -> Optional[str]:
    """Encode the standard address of a script, or None if it has none.

    Args:
        raw: Locking script bytes
        network: mainnet, testnet or regtest

    Returns:
        Optional[str]: base58check or bech32/bech32m address
    """
    params = NETWORKS[network]
    script_type = classify_bytes(raw)
    if script_type == ScriptType.P2PKH:
        return base58.b58encode_check(params['p2pkh'] + raw[3:23]).decode()
    if script_type == ScriptType.P2SH:
        return base58.b58encode_check(params['p2sh'] + raw[2:22]).decode()
    if script_type in (ScriptType.P2WPKH, ScriptType.P2WSH):
        return bech32.encode(params['hrp'], 0, list(raw[2:]))
    if script_type == ScriptType.P2TR:
        return bech32.encode(params['hrp'], 1, list(raw[2:]))
    return None


def normalize_address(address: str) -> str:
    """Lowercase bech32 addresses; base58 stays byte-exact."""
    lowered = address.lower()
    for params in NETWORKS.values():
        if lowered.startswith(params['hrp'] + '1'):
            return lowered
    return address


def derive_script_id(script: ScriptBytes, out_index: int, txid: str, network: str = 'mainnet') -> ScriptId:
    """Identity of the Script node for output ``out_index`` of ``txid``.

    Args:
        script: The output's locking script
        out_index: Position of the output in its transaction
        txid: Transaction that created the output
        network: Address encoding network

    Returns:
        ScriptId: Address when one exists, otherwise Synthetic
    """
    if script.address:
        return ScriptId.from_address(normalize_address(script.address))
    try:
        derived = address_from_script(script.raw(), network)
    except ParseError:
        derived = None
    if derived:
        return ScriptId.from_address(derived)
    return ScriptId.synthetic(out_index, txid)
