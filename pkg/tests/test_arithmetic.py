import numpy as np
import pytest

from app.exceptions import RangeAnalysisError
from app.models.fixed_point import FxpFormat, FxpStats
from app.services.arithmetic import FixedPointArithmetic, OpCounter, RealArithmetic
from app.services.fixed_point import (
    TRUNCATE,
    fxp_arith,
    fxp_dot,
    quantize,
    required_accumulator_width,
)

Q6_10 = FxpFormat(6, 10)
Q16_16 = FxpFormat(16, 16)


@pytest.mark.parametrize("fmt", [Q6_10, Q16_16])
def test_lift_matches_scalar_quantize(fmt, rng):
    xs = rng.uniform(-20.0, 20.0, size=64)
    arith = FixedPointArithmetic(fmt)
    lifted = arith.lift(xs)
    assert [int(m) for m in lifted] == [quantize(float(x), fmt).mantissa for x in xs]


def test_wide_formats_use_python_integers():
    assert FixedPointArithmetic(Q6_10).dtype is np.int64
    assert FixedPointArithmetic(Q16_16).dtype is object


@pytest.mark.parametrize("rounding", ["nearest", TRUNCATE])
def test_mul_matches_scalar_reference(rounding, rng):
    arith = FixedPointArithmetic(Q6_10, rounding=rounding)
    xs, ys = rng.uniform(-4, 4, size=32), rng.uniform(-4, 4, size=32)
    products = arith.mul(arith.lift(xs), arith.lift(ys))
    expected = [
        fxp_arith(quantize(float(x), Q6_10), quantize(float(y), Q6_10), "mul", rounding=rounding).mantissa
        for x, y in zip(xs, ys)
    ]
    assert [int(m) for m in products] == expected


@pytest.mark.parametrize("accumulate", ["wide", "per_op"])
def test_matmul_matches_scalar_dot(accumulate, rng):
    arith = FixedPointArithmetic(Q6_10, accumulate=accumulate)
    A, x = rng.uniform(-2, 2, size=(6, 6)), rng.uniform(-2, 2, size=6)
    out = arith.matmul(arith.lift(A), arith.lift(x))
    width = required_accumulator_width(Q6_10, 6)
    for r in range(6):
        pairs = [(quantize(float(A[r, k]), Q6_10), quantize(float(x[k]), Q6_10)) for k in range(6)]
        assert int(out[r]) == fxp_dot(width, pairs, per_op=accumulate == "per_op").mantissa


def test_saturation_is_counted():
    stats = FxpStats()
    arith = FixedPointArithmetic(FxpFormat(4, 4), stats=stats)
    big = arith.lift([7.0, 7.0])
    assert list(arith.lower(arith.add(big, big))) == [7.9375, 7.9375]
    assert stats.saturations == 2
    arith.lift([50.0])
    assert stats.saturations == 3


def test_reciprocal_is_requantized():
    arith = FixedPointArithmetic(Q6_10)
    inv = arith.lower(arith.reciprocal(arith.lift([3.0])))[0]
    assert abs(inv - 1.0 / 3.0) <= Q6_10.error_bound


def test_scaled_product_rounds_once():
    arith = FixedPointArithmetic(FxpFormat(8, 8))
    tiny = arith.lift(2.0**-6)
    # 2**-12 underflows a plain product but survives the scaled one
    assert float(arith.lower(arith.mul(tiny, tiny))) == 0.0
    assert float(arith.lower(arith.mul_scaled(tiny, tiny, 12))) == 1.0
    assert arith.product_exponent(tiny, tiny) == -11
    assert float(arith.lower(arith.mul_scaled(arith.lift(3.0), arith.lift(4.0), -3))) == 1.5
    assert arith.product_exponent(arith.lift(0.0), tiny) == 0
    assert RealArithmetic().mul_scaled(3.0, 4.0, -3) == 1.5
    assert RealArithmetic().product_exponent(2.0, 2.0) == 3


def test_scaled_product_saturates_on_left_shift():
    stats = FxpStats()
    arith = FixedPointArithmetic(FxpFormat(4, 4), stats=stats)
    out = arith.mul_scaled(arith.lift(4.0), arith.lift(4.0), 8)
    assert out == FxpFormat(4, 4).max_mantissa
    assert stats.saturations == 1


def test_lift_rejects_non_finite():
    with pytest.raises(ValueError):
        FixedPointArithmetic(Q6_10).lift([np.inf])


def test_unknown_modes():
    with pytest.raises(ValueError):
        FixedPointArithmetic(Q6_10, rounding="stochastic")
    with pytest.raises(ValueError):
        FixedPointArithmetic(Q6_10, accumulate="tree")


def test_counter_skips_structural_zeros():
    counter = OpCounter()
    arith = RealArithmetic(counter)
    with arith.unit("RNEA", "forward", 0):
        arith.matmul(np.eye(6), np.ones(6))
        arith.matmul(np.ones((2, 2)), np.ones(2))
        arith.mul(np.array([0.0, 2.0]), np.array([3.0, 3.0]))
    with arith.unit("RNEA", "backward", 1):
        arith.reciprocal(np.array([2.0]))
    assert counter.by_unit()[("RNEA", "forward", 0)] == {"mul": 11, "add": 2}
    assert counter.total("div", module="RNEA", pass_="backward") == 1
    assert counter.total("mul", module="Minv") == 0


def test_counter_units_nest():
    counter = OpCounter()
    with counter.unit("Minv", "backward", 2):
        with counter.unit("Minv", "divide", 2):
            counter.add("div", 1)
        counter.add("mul", 3)
    assert counter.current == ("", "", -1)
    assert counter.by_unit() == {
        ("Minv", "backward", 2): {"mul": 3},
        ("Minv", "divide", 2): {"div": 1},
    }


def test_fork_shares_stats_but_not_counter():
    stats = FxpStats()
    arith = FixedPointArithmetic(Q6_10, counter=OpCounter(), stats=stats, track_ranges=True)
    forked = arith.fork()
    assert forked.stats is stats
    assert forked.counter is None
    assert forked.fmt == Q6_10


def test_track_records_peaks_and_rejects_non_finite():
    stats = FxpStats()
    arith = RealArithmetic(stats=stats)
    arith.track("v", np.array([1.0, -3.0]))
    assert stats.max_abs == {"v": 3.0}
    with pytest.raises(RangeAnalysisError) as excinfo:
        arith.track("f", np.array([np.nan]))
    assert excinfo.value.variable == "f"


def test_tracking_off_by_default_without_stats():
    arith = RealArithmetic()
    arith.track("v", np.array([np.inf]))
