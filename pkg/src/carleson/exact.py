"""Exact rational coercion and formatting shared across the package.

Every branch in the stopping construction compares rationals for equality or
order, so floats are rejected outright instead of silently converted.
"""

from __future__ import annotations

from fractions import Fraction


def as_fraction(value, *, what: str = "value") -> Fraction:
    """Coerce to Fraction; floats are refused because they are not exact."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, bool):
        raise TypeError(f"{what}: bool is not a rational")
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, float):
        raise TypeError(
            f"{what}: refusing float {value!r}; pass a Fraction or a decimal string"
        )
    if isinstance(value, str):
        try:
            return Fraction(value.strip())
        except (ValueError, ZeroDivisionError) as exc:
            raise ValueError(f"{what}: cannot parse rational from {value!r}") from exc
    raise TypeError(f"{what}: unsupported type {type(value).__name__}")


def format_fraction(value: Fraction) -> str:
    """Render as 'p/q', always with an explicit denominator."""
    return f"{value.numerator}/{value.denominator}"
