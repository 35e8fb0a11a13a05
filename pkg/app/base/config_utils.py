from decimal import Decimal
from typing import List

from app.base.exceptions import CustomException, ExType


def comma_separated_str_to_list(comma_separated_str: str) -> List[str]:
    return [item.strip() for item in comma_separated_str.split(",") if item.strip()]


def comma_separated_str_to_floats(comma_separated_str: str) -> List[float]:
    """Parse `0,0.1,0.2` or the progression shorthand `0,0.1,...,1.0`."""
    items = comma_separated_str_to_list(comma_separated_str)
    if "..." not in items:
        return [_to_float(item) for item in items]

    if items.count("...") != 1 or items.index("...") != 2 or len(items) != 4:
        raise CustomException(
            code=ExType.USAGE_ERROR,
            field="grid",
            detail=f"Expected a progression like a,b,...,c: {comma_separated_str}",
        )
    # Decimal keeps 0.1 steps exact so the last value is hit precisely.
    first, second, last = (Decimal(items[0]), Decimal(items[1]), Decimal(items[3]))
    step = second - first
    if step <= 0 or last < first:
        raise CustomException(
            code=ExType.USAGE_ERROR,
            field="grid",
            detail=f"Progression '{comma_separated_str}' is not increasing",
        )
    values = []
    current = first
    while current <= last:
        values.append(float(current))
        current += step
    return values


def comma_separated_str_to_ints(comma_separated_str: str) -> List[int]:
    return [int(item) for item in comma_separated_str_to_list(comma_separated_str)]


def _to_float(item: str) -> float:
    try:
        return float(item)
    except ValueError as e:
        raise CustomException(
            code=ExType.USAGE_ERROR, field="grid", detail=f"'{item}' is not a number"
        ) from e
