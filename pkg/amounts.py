"""Satoshi amounts.

Every monetary value inside the toolkit is an ``int`` number of satoshis.
Decimal BTC text from the node is converted digit by digit; floats never
touch a value.
"""
import re
from fractions import Fraction
from typing import Union
from error_handler import ParseError, ValuePrecisionError

SATS_PER_BTC = 100_000_000
MAX_MONEY = 21_000_000 * SATS_PER_BTC
INITIAL_SUBSIDY = 50 * SATS_PER_BTC
HALVING_INTERVAL = 210_000

_DECIMAL = re.compile(r'^(-?)(\d+)(?:\.(\d*))?$')


def parse_btc(value: Union[str, int]) -> int:
    """Convert a decimal BTC amount to satoshis without floating point.

    Args:
        value: Decimal text such as "34.93", or an int meaning whole BTC

    Returns:
        int: Amount in satoshis

    Raises:
        ValuePrecisionError: More than 8 fractional digits
        ParseError: Not a decimal number
    """
    if isinstance(value, bool):
        raise ParseError(f"Not a BTC amount: {value!r}")
    if isinstance(value, int):
        return value * SATS_PER_BTC
    if isinstance(value, float):
        raise ParseError(f"Refusing binary float amount {value!r}; parse JSON with parse_float=str")

    text = str(value).strip()
    # Exponent forms like "1e-08" come from some node versions
    if 'e' in text or 'E' in text:
        mantissa, _, exponent = text.lower().partition('e')
        return _parse_scaled(mantissa, int(exponent), text)

    match = _DECIMAL.match(text)
    if not match:
        raise ParseError(f"Not a BTC amount: {text!r}")
    sign, whole, frac = match.group(1), match.group(2), match.group(3) or ''
    if len(frac) > 8:
        raise ValuePrecisionError(f"More than 8 fractional digits in {text!r}")
    sats = int(whole) * SATS_PER_BTC + int(frac.ljust(8, '0'))
    return -sats if sign else sats


def _parse_scaled(mantissa: str, exponent: int, original: str) -> int:
    match = _DECIMAL.match(mantissa)
    if not match:
        raise ParseError(f"Not a BTC amount: {original!r}")
    sign, whole, frac = match.group(1), match.group(2), match.group(3) or ''
    digits = int(whole + frac)
    scale = 8 + exponent - len(frac)
    if scale >= 0:
        sats = digits * 10 ** scale
    else:
        sats, rest = divmod(digits, 10 ** -scale)
        if rest:
            raise ValuePrecisionError(f"More than 8 fractional digits in {original!r}")
    return -sats if sign else sats


def format_btc(sats: int) -> str:
    """Render satoshis as canonical 8-decimal BTC text (e.g. 3493000000 -> "34.93000000")."""
    sign = '-' if sats < 0 else ''
    whole, frac = divmod(abs(sats), SATS_PER_BTC)
    return f"{sign}{whole}.{frac:08d}"


def round_half_away_from_zero(x: Union[Fraction, int]) -> int:
    """Round an exact rational to the nearest integer, ties away from zero.

    Args:
        x: Exact value (Fraction or int)

    Returns:
        int: Rounded value
    """
    x = Fraction(x)
    magnitude = abs(x)
    rounded = (2 * magnitude.numerator + magnitude.denominator) // (2 * magnitude.denominator)
    return -rounded if x < 0 else rounded


def block_subsidy(height: int) -> int:
    """Protocol subsidy in satoshis: 50 BTC halved every 210 000 blocks."""
    if height < 0:
        raise ValueError(f"Negative block height {height}")
    halvings = height // HALVING_INTERVAL
    if halvings >= 64:
        return 0
    return INITIAL_SUBSIDY >> halvings
