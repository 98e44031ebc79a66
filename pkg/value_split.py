"""Edge value formulas.

Each formula is evaluated as an exact rational over satoshi integers and
rounded once, half away from zero.
"""
from dataclasses import dataclass
from fractions import Fraction
from amounts import round_half_away_from_zero, block_subsidy
from error_handler import ConfigError, DegenerateTransactionError, InvariantViolationError, ValueSplitError

AS_PRINTED = 'as-printed'
CONSERVING = 'conserving'

__all__ = [
    'ValueSplitConfig', 'mint_edge_value', 'fee_edge_value', 'transfer_edge_value',
    'residual', 'round_half_away_from_zero', 'block_subsidy',
]


@dataclass(frozen=True)
class ValueSplitConfig:
    """How transaction values are split over edges.

    Attributes:
        transfer_denominator_mode: ``as-printed`` divides by (inputs - fee),
            ``conserving`` divides by inputs so edges sum to the outputs
        max_inout_threshold: Skip txs with more inputs AND more outputs than this
        skip_zero_value: Skip txs whose every output is 0
        aggregate_tx_inputs: One Tx-Transfers edge per producing tx instead of one per input
    """
    transfer_denominator_mode: str = AS_PRINTED
    max_inout_threshold: int = 20
    skip_zero_value: bool = True
    aggregate_tx_inputs: bool = False

    def __post_init__(self):
        if self.transfer_denominator_mode not in (AS_PRINTED, CONSERVING):
            raise ConfigError(f"Unknown transfer denominator mode {self.transfer_denominator_mode!r}")
        if self.max_inout_threshold < 1:
            raise ConfigError("max_inout_threshold must be >= 1")


def mint_edge_value(minted: int, paid_to_script: int, mining_reward: int) -> int:
    """Minted coins apportioned to one coinbase output.

    Args:
        minted: Coins minted by the block
        paid_to_script: Value of the coinbase output
        mining_reward: Total paid by the coinbase

    Returns:
        int: round(minted * paid_to_script / mining_reward)
    """
    if mining_reward <= 0:
        raise ValueSplitError("Mining reward is zero; no Mints edges to scripts")
    return round_half_away_from_zero(Fraction(minted * paid_to_script, mining_reward))


def fee_edge_value(tx_fee: int, u_value: int, total_tx_input: int, v_value: int, total_paid_to_miner: int) -> int:
    """Share of a tx fee flowing from input script u to miner output v.

    Args:
        tx_fee: Fee of the transaction
        u_value: Value of the spent input u
        total_tx_input: Sum of all input values of the transaction
        v_value: Value of the miner's coinbase output v
        total_paid_to_miner: Sum of all coinbase outputs

    Returns:
        int: round(tx_fee * u / max(total_in, 1) * v / miner_total)
    """
    if total_paid_to_miner <= 0:
        raise ValueSplitError("Nothing paid to the miner; fees are unclaimed")
    share = Fraction(tx_fee * u_value, max(total_tx_input, 1))
    return round_half_away_from_zero(share * v_value / total_paid_to_miner)


def transfer_edge_value(v_out_value: int, u_in_value: int, sum_inputs: int, fee: int,
                        cfg: ValueSplitConfig = ValueSplitConfig()) -> int:
    """Value moved from input script u to output script v.

    Raises:
        DegenerateTransactionError: The denominator is not positive
    """
    if cfg.transfer_denominator_mode == CONSERVING:
        denominator = sum_inputs
    else:
        denominator = sum_inputs - fee
    if denominator <= 0:
        raise DegenerateTransactionError(
            f"Transfer denominator {denominator} <= 0 (inputs {sum_inputs}, fee {fee}, mode {cfg.transfer_denominator_mode})"
        )
    return round_half_away_from_zero(Fraction(v_out_value * u_in_value, denominator))


def residual(tx) -> int:
    """Value lost by a transaction: inputs - outputs - fee.

    Raises:
        InvariantViolationError: The transaction creates value
    """
    if tx.is_coinbase:
        raise ValueError("residual() is undefined for the coinbase transaction")
    lost = tx.input_total - tx.output_total - tx.fee
    if lost < 0:
        raise InvariantViolationError(f"Negative residual {lost} sat in tx {tx.txid}")
    return lost
