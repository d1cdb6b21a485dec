"""Shared numeric helpers.

Reported figures are rounded half-up to one decimal place. Python's built-in
round() rounds half to even, so 83.65 would become 83.6 instead of 83.7;
these helpers go through Decimal with explicit ROUND_HALF_UP and never pass
through a binary float on the way.
"""

from __future__ import annotations

from decimal import Decimal, ROUND_HALF_UP
from fractions import Fraction

_ONE_DP = Decimal("0.1")


def round1(value: Decimal | Fraction | int) -> float:
    """Round an exact numeric value half-up to one decimal place."""
    if isinstance(value, Fraction):
        value = Decimal(value.numerator) / Decimal(value.denominator)
    elif isinstance(value, int):
        value = Decimal(value)
    return float(value.quantize(_ONE_DP, rounding=ROUND_HALF_UP))


def round1_ratio(numerator: int, denominator: int) -> float:
    """Round numerator/denominator half-up to one decimal place.

    The division happens in Decimal, not float, so e.g. 5051/1382 lands on
    3.7 exactly rather than drifting through 3.6545...'s float neighbour.
    """
    if denominator == 0:
        raise ZeroDivisionError("ratio denominator is zero")
    return round1(Fraction(numerator, denominator))
