from fractions import Fraction

import pytest

from app.exceptions import AccumulatorWidthError, FormatMismatchError
from app.models.fixed_point import DEFAULT_FORMAT, FxpFormat, FxpStats, FxpValue
from app.services.fixed_point import (
    TRUNCATE,
    fxp_arith,
    fxp_dot,
    quantize,
    quantize_all,
    required_accumulator_width,
    round_shift,
)

Q8_8 = FxpFormat(8, 8)


def test_parse_and_str():
    fmt = FxpFormat.parse("Q12.12")
    assert fmt == FxpFormat(12, 12)
    assert fmt.width == 24
    assert str(fmt) == "Q12.12"
    assert FxpFormat.parse(" q6.10 ") == FxpFormat(6, 10)


@pytest.mark.parametrize("text", ["12.12", "Q12", "Qa.b", "Q12.12.1"])
def test_parse_rejects_bad_text(text):
    with pytest.raises(ValueError):
        FxpFormat.parse(text)


@pytest.mark.parametrize("n_int,n_frac", [(0, 8), (4, -1), (40, 25)])
def test_format_bounds(n_int, n_frac):
    with pytest.raises(ValueError):
        FxpFormat(n_int, n_frac)


def test_format_range():
    fmt = FxpFormat(4, 4)
    assert fmt.max_mantissa == 127
    assert fmt.min_mantissa == -128
    assert fmt.max_value == 7.9375
    assert fmt.min_value == -8.0
    assert fmt.error_bound == 2.0**-5


def test_formats_order_by_fields():
    assert sorted([FxpFormat(6, 18), FxpFormat(6, 10), FxpFormat(4, 20)]) == [
        FxpFormat(4, 20),
        FxpFormat(6, 10),
        FxpFormat(6, 18),
    ]


def test_quantization_error_is_bounded(rng):
    fmt = FxpFormat(6, 10)
    bound = Fraction(1, 2 ** (fmt.n_frac + 1))
    for x in rng.uniform(fmt.min_value, fmt.max_value, size=500):
        value = quantize(float(x), fmt)
        assert abs(Fraction(float(x)) - Fraction(value.mantissa, fmt.scale)) <= bound


def test_quantize_rounds_ties_away_from_zero():
    assert quantize(1.5 / 256, Q8_8).mantissa == 2
    assert quantize(-1.5 / 256, Q8_8).mantissa == -2
    assert quantize(0.1, Q8_8).mantissa == 26


def test_quantize_saturates_and_counts():
    stats = FxpStats()
    fmt = FxpFormat(4, 4)
    assert quantize(100.0, fmt, stats).to_real() == fmt.max_value
    assert quantize(-100.0, fmt, stats).to_real() == fmt.min_value
    assert quantize(1.0, fmt, stats).to_real() == 1.0
    assert stats.saturations == 2


@pytest.mark.parametrize("x", [float("nan"), float("inf"), -float("inf")])
def test_quantize_rejects_non_finite(x):
    with pytest.raises(ValueError):
        quantize(x, Q8_8)


def test_value_outside_format():
    with pytest.raises(ValueError):
        FxpValue(1 << 20, Q8_8)


def test_round_shift_modes():
    assert round_shift(3, 1) == 2
    assert round_shift(-3, 1) == -2
    assert round_shift(5, 2) == 1
    assert round_shift(3, 1, TRUNCATE) == 1
    assert round_shift(-3, 1, TRUNCATE) == -2
    assert round_shift(3, -2) == 12


def test_arith_exact_product():
    a, b = quantize(1.5, Q8_8), quantize(2.25, Q8_8)
    assert fxp_arith(a, b, "mul").to_real() == 3.375
    assert fxp_arith(a, b, "add").to_real() == 3.75
    assert fxp_arith(a, b, "sub").to_real() == -0.75


def test_arith_saturates():
    stats = FxpStats()
    big = quantize(100.0, Q8_8)
    assert fxp_arith(big, big, "add", stats).mantissa == Q8_8.max_mantissa
    assert fxp_arith(big, big, "mul", stats).mantissa == Q8_8.max_mantissa
    assert stats.saturations == 2


def test_arith_rejects_mixed_formats():
    with pytest.raises(FormatMismatchError):
        fxp_arith(quantize(1.0, Q8_8), quantize(1.0, FxpFormat(6, 10)), "add")


def test_arith_rejects_unknown_op():
    with pytest.raises(ValueError):
        fxp_arith(quantize(1.0, Q8_8), quantize(1.0, Q8_8), "div")


def test_required_accumulator_width():
    assert required_accumulator_width(FxpFormat(12, 12), 6) == 51
    assert required_accumulator_width(FxpFormat(12, 12), 1) == 48


def test_dot_rejects_narrow_accumulator():
    pairs = [(quantize(1.0, Q8_8), quantize(1.0, Q8_8))] * 4
    with pytest.raises(AccumulatorWidthError):
        fxp_dot(33, pairs)


def test_wide_accumulator_rounds_once():
    fmt = FxpFormat(4, 2)
    quarter = quantize(0.25, fmt)
    pairs = [(quarter, quarter)] * 4
    width = required_accumulator_width(fmt, 4)
    assert fxp_dot(width, pairs).to_real() == 0.25
    assert fxp_dot(width, pairs, per_op=True).to_real() == 0.0


def test_dot_rejects_mixed_formats():
    pairs = [
        (quantize(1.0, Q8_8), quantize(1.0, Q8_8)),
        (quantize(1.0, FxpFormat(6, 10)), quantize(1.0, FxpFormat(6, 10))),
    ]
    with pytest.raises(FormatMismatchError):
        fxp_dot(64, pairs)


def test_empty_dot():
    zero = fxp_dot(32, [])
    assert zero.mantissa == 0
    assert zero.fmt == DEFAULT_FORMAT
    assert fxp_dot(32, [], fmt=Q8_8) == FxpValue(0, Q8_8)


def test_quantize_all():
    assert [v.to_real() for v in quantize_all([0.5, -0.25], Q8_8)] == [0.5, -0.25]


def test_stats_merge_keeps_peaks():
    a, b = FxpStats(), FxpStats()
    a.observe("v", 2.0)
    a.observe("v", 1.0)
    b.observe("v", 3.0)
    b.observe("f", 0.5)
    b.record_saturation(4)
    a.merge(b)
    assert a.max_abs == {"v": 3.0, "f": 0.5}
    assert a.saturations == 4
    assert a.peak == 3.0
    assert list(a.to_dict()["max_abs"]) == ["f", "v"]
