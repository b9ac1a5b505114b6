"""Small shared helpers."""
from __future__ import annotations

import math


def round_half_up(x: float) -> int:
    """Round to the nearest integer, halves away from the floor (2.5 -> 3, -2.5 -> -2)."""
    return int(math.floor(x + 0.5))


def fmt_value(v) -> str:
    """Render an attribute value for CSV cells and report sentences.

    Integers stay exact, floats use the shortest round-trip repr, None is empty.
    """
    if v is None:
        return ""
    if isinstance(v, bool):
        raise TypeError("boolean attribute values are not supported")
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        if math.isnan(v) or math.isinf(v):
            raise ValueError(f"non-finite attribute value: {v!r}")
        return repr(v)
    return str(v)


def fmt_number(v: float) -> str:
    """Human-oriented number formatting for sentences: drop '.0', cap digits."""
    if isinstance(v, int):
        return str(v)
    if float(v).is_integer():
        return str(int(v))
    return format(v, ".6g")
