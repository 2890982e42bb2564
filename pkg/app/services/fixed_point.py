"""Scalar fixed-point reference semantics.

These functions are the bit-exact definition the vectorised
``FixedPointArithmetic`` binding follows; they work on Python integers so any
width up to 64 bits is exact.
"""

import math
from fractions import Fraction
from typing import Iterable, Optional, Sequence, Tuple

from app.exceptions import AccumulatorWidthError, FormatMismatchError
from app.models.fixed_point import DEFAULT_FORMAT, FxpFormat, FxpStats, FxpValue

NEAREST = "nearest"
TRUNCATE = "truncate"


def round_shift(value: int, shift: int, rounding: str = NEAREST) -> int:
    """Divide ``value`` by 2^shift, rounding to nearest with ties away from zero
    (or toward -inf with ``TRUNCATE``)."""
    if shift <= 0:
        return value << -shift
    if rounding == TRUNCATE:
        return value >> shift
    half = 1 << (shift - 1)
    if value >= 0:
        return (value + half) >> shift
    return -((-value + half) >> shift)


def saturate(mantissa: int, fmt: FxpFormat, stats: Optional[FxpStats] = None) -> int:
    if mantissa > fmt.max_mantissa:
        if stats is not None:
            stats.record_saturation()
        return fmt.max_mantissa
    if mantissa < fmt.min_mantissa:
        if stats is not None:
            stats.record_saturation()
        return fmt.min_mantissa
    return mantissa


def quantize_mantissa(x: float, n_frac: int) -> int:
    """round(x * 2^n_frac), ties away from zero, computed exactly."""
    scaled = Fraction(x) * (1 << n_frac)
    floor = math.floor(abs(scaled))
    mag = floor + 1 if abs(scaled) - floor >= Fraction(1, 2) else floor
    return mag if scaled >= 0 else -mag


def quantize(x: float, fmt: FxpFormat, stats: Optional[FxpStats] = None) -> FxpValue:
    """Quantize a finite real to ``fmt``; saturation is counted, not raised."""
    if not math.isfinite(x):
        raise ValueError(f"cannot quantize non-finite value {x!r}")
    return FxpValue(saturate(quantize_mantissa(x, fmt.n_frac), fmt, stats), fmt)


def to_real(value: FxpValue) -> float:
    return value.to_real()


def _check_format(a: FxpValue, b: FxpValue) -> FxpFormat:
    if a.fmt != b.fmt:
        raise FormatMismatchError(f"format mismatch: {a.fmt} vs {b.fmt}")
    return a.fmt


def fxp_arith(
    a: FxpValue,
    b: FxpValue,
    op: str,
    stats: Optional[FxpStats] = None,
    rounding: str = NEAREST,
) -> FxpValue:
    """``add``, ``sub`` or ``mul`` with a double-width intermediate.

    Products are rounded once by a shift of n_frac; every result saturates.
    """
    fmt = _check_format(a, b)
    if op == "add":
        raw = a.mantissa + b.mantissa
    elif op == "sub":
        raw = a.mantissa - b.mantissa
    elif op == "mul":
        raw = round_shift(a.mantissa * b.mantissa, fmt.n_frac, rounding)
    else:
        raise ValueError(f"unknown fixed-point op {op!r}")
    return FxpValue(saturate(raw, fmt, stats), fmt)


def required_accumulator_width(fmt: FxpFormat, n_terms: int) -> int:
    return 2 * fmt.width + max(0, math.ceil(math.log2(n_terms))) if n_terms else 0


def fxp_dot(
    acc_width: int,
    pairs: Sequence[Tuple[FxpValue, FxpValue]],
    stats: Optional[FxpStats] = None,
    rounding: str = NEAREST,
    per_op: bool = False,
    fmt: Optional[FxpFormat] = None,
) -> FxpValue:
    """Sum of products accumulated exactly in an ``acc_width``-bit register and
    rounded once at the end.

    With ``per_op`` every product is rounded and the running sum saturated,
    modelling a chain without a wide accumulator. An empty sum is zero in
    ``fmt``, or in ``DEFAULT_FORMAT`` when no format is given.
    """
    if not pairs:
        return FxpValue(0, fmt or DEFAULT_FORMAT)
    fmt = _check_format(*pairs[0])
    for a, b in pairs:
        if a.fmt != fmt or b.fmt != fmt:
            raise FormatMismatchError("all dot-product operands must share one format")
    needed = required_accumulator_width(fmt, len(pairs))
    if acc_width < needed:
        raise AccumulatorWidthError(
            f"accumulator of {acc_width} bits is too small for {len(pairs)} "
            f"terms in {fmt}; need {needed}"
        )
    if per_op:
        total = FxpValue(0, fmt)
        for a, b in pairs:
            total = fxp_arith(total, fxp_arith(a, b, "mul", stats, rounding), "add", stats)
        return total
    acc = sum(a.mantissa * b.mantissa for a, b in pairs)
    return FxpValue(saturate(round_shift(acc, fmt.n_frac, rounding), fmt, stats), fmt)


def quantize_all(xs: Iterable[float], fmt: FxpFormat) -> list:
    return [quantize(x, fmt) for x in xs]
