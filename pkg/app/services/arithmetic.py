"""Scalar bindings the RBD kernels are written against.

A binding owns the numeric representation of every kernel value. Kernels only
index, transpose and stack arrays themselves (exact in any representation) and
route every rounding operation through the binding, so the same kernel source
runs in double precision and in fixed point.
"""

from collections import defaultdict
from contextlib import contextmanager
from typing import Dict, List, Optional, Tuple

import numpy as np

from app.exceptions import RangeAnalysisError
from app.models.fixed_point import FxpFormat, FxpStats
from app.services.fixed_point import NEAREST, TRUNCATE

UnitKey = Tuple[str, str, int]

# Headroom bits kept free in int64 accumulators (sums of up to 256 products)
_ACC_HEADROOM = 8


class OpCounter:
    """Counts arithmetic by pipeline unit ``(module, pass, joint)``.

    Multiplications are counted only when both operands are structurally
    non-zero, so one-hot motion subspaces and sparse transforms are free.
    """

    def __init__(self):
        self.counts: Dict[UnitKey, Dict[str, int]] = defaultdict(lambda: defaultdict(int))
        self._stack: List[UnitKey] = []

    @property
    def current(self) -> UnitKey:
        return self._stack[-1] if self._stack else ("", "", -1)

    @contextmanager
    def unit(self, module: str, pass_: str, joint: int):
        self._stack.append((module, pass_, joint))
        try:
            yield
        finally:
            self._stack.pop()

    def add(self, kind: str, n: int):
        if n:
            self.counts[self.current][kind] += int(n)

    def total(self, kind: str, module: Optional[str] = None, pass_: Optional[str] = None) -> int:
        return sum(
            c.get(kind, 0)
            for (m, p, _), c in self.counts.items()
            if (module is None or m == module) and (pass_ is None or p == pass_)
        )

    def by_unit(self) -> Dict[UnitKey, Dict[str, int]]:
        return {k: dict(v) for k, v in sorted(self.counts.items())}


class Arithmetic:
    """Common plumbing: op counting and range tracking."""

    name = "abstract"

    def __init__(
        self,
        counter: Optional[OpCounter] = None,
        stats: Optional[FxpStats] = None,
        track_ranges: Optional[bool] = None,
    ):
        self.counter = counter
        self.stats = stats
        self.track_ranges = stats is not None if track_ranges is None else track_ranges

    def fork(self, counter: Optional[OpCounter] = None) -> "Arithmetic":
        """Same semantics and shared stats, separate op counter (for worker threads)."""
        raise NotImplementedError

    @contextmanager
    def unit(self, module: str, pass_: str, joint: int):
        if self.counter is None:
            yield
        else:
            with self.counter.unit(module, pass_, joint):
                yield

    def _count_mul(self, a, b):
        if self.counter is not None:
            nz = np.broadcast_arrays(np.asarray(a) != 0, np.asarray(b) != 0)
            self.counter.add("mul", np.count_nonzero(nz[0] & nz[1]))

    def _count_matmul(self, a, b):
        if self.counter is not None:
            pattern = (np.asarray(a) != 0).astype(np.int64) @ (np.asarray(b) != 0).astype(
                np.int64
            )
            macs = int(np.sum(pattern))
            self.counter.add("mul", macs)
            self.counter.add("add", max(0, macs - np.count_nonzero(pattern)))

    def _count(self, kind: str, n: int = 1):
        if self.counter is not None:
            self.counter.add(kind, n)

    def track(self, name: str, a):
        """Record the peak magnitude of a kernel intermediate."""
        if not self.track_ranges or self.stats is None:
            return
        values = self.lower(a)
        if values.size == 0:
            return
        if not np.all(np.isfinite(values)):
            raise RangeAnalysisError(name)
        self.stats.observe(name, float(np.max(np.abs(values))))

    # interface implemented by the bindings
    def lift(self, x):
        raise NotImplementedError

    def lower(self, a) -> np.ndarray:
        raise NotImplementedError

    def zeros(self, shape):
        raise NotImplementedError

    def add(self, a, b):
        raise NotImplementedError

    def sub(self, a, b):
        raise NotImplementedError

    def neg(self, a):
        raise NotImplementedError

    def mul(self, a, b):
        raise NotImplementedError

    def matmul(self, a, b):
        raise NotImplementedError

    def reciprocal(self, a):
        raise NotImplementedError

    def mul_scaled(self, a, b, k: int):
        """Product times 2**k, rounded once."""
        raise NotImplementedError

    def product_exponent(self, a, b) -> int:
        """e such that 2**(e-1) <= |a*b| < 2**e (0 for a zero product)."""
        raise NotImplementedError


class RealArithmetic(Arithmetic):
    """Double-precision binding (the oracle)."""

    name = "real"

    def fork(self, counter: Optional[OpCounter] = None) -> "RealArithmetic":
        return RealArithmetic(counter, self.stats, self.track_ranges)

    def lift(self, x):
        return np.array(x, dtype=float)

    def lower(self, a) -> np.ndarray:
        return np.asarray(a, dtype=float)

    def zeros(self, shape):
        return np.zeros(shape)

    def add(self, a, b):
        self._count("add", np.size(a))
        return a + b

    def sub(self, a, b):
        self._count("add", np.size(a))
        return a - b

    def neg(self, a):
        return -a

    def mul(self, a, b):
        self._count_mul(a, b)
        return a * b

    def matmul(self, a, b):
        self._count_matmul(a, b)
        return a @ b

    def reciprocal(self, a):
        self._count("div", np.size(a))
        return 1.0 / a

    def mul_scaled(self, a, b, k: int):
        self._count_mul(a, b)
        return np.ldexp(a * b, int(k))

    def product_exponent(self, a, b) -> int:
        return int(np.frexp(float(a) * float(b))[1])

    def __repr__(self) -> str:
        return "RealArithmetic()"


class FixedPointArithmetic(Arithmetic):
    """Saturating fixed-point binding over integer mantissa arrays.

    Products and dot products are formed exactly in a double-width accumulator
    and rounded once per output (``accumulate="wide"``) or once per product
    with a saturating running sum (``accumulate="per_op"``). Reciprocals go
    through double precision and are re-quantized.
    """

    name = "fixed"

    def __init__(
        self,
        fmt: FxpFormat,
        rounding: str = NEAREST,
        accumulate: str = "wide",
        counter: Optional[OpCounter] = None,
        stats: Optional[FxpStats] = None,
        track_ranges: bool = False,
    ):
        if rounding not in (NEAREST, TRUNCATE):
            raise ValueError(f"unknown rounding mode {rounding!r}")
        if accumulate not in ("wide", "per_op"):
            raise ValueError(f"unknown accumulation mode {accumulate!r}")
        super().__init__(
            counter, stats if stats is not None else FxpStats(), track_ranges
        )
        self.fmt = fmt
        self.rounding = rounding
        self.accumulate = accumulate
        self._lo = fmt.min_mantissa
        self._hi = fmt.max_mantissa
        self._f = fmt.n_frac
        self.dtype = np.int64 if 2 * fmt.width + _ACC_HEADROOM <= 63 else object

    def fork(self, counter: Optional[OpCounter] = None) -> "FixedPointArithmetic":
        return FixedPointArithmetic(
            self.fmt, self.rounding, self.accumulate, counter, self.stats, self.track_ranges
        )

    # representation helpers

    def _asarray(self, a):
        return np.asarray(a, dtype=self.dtype)

    def _saturate(self, m):
        m = self._asarray(m)
        over = np.count_nonzero((m > self._hi) | (m < self._lo))
        if over:
            self.stats.record_saturation(over)
            m = np.minimum(np.maximum(m, self._lo), self._hi)
        return self._asarray(m)

    def _round_shift(self, m, shift: int):
        if shift <= 0:
            return m
        if self.rounding == TRUNCATE:
            return m >> shift
        half = 1 << (shift - 1)
        return np.where(m >= 0, (m + half) >> shift, -((-m + half) >> shift))

    # interface

    def lift(self, x):
        x = np.asarray(x, dtype=float)
        if not np.all(np.isfinite(x)):
            raise ValueError("cannot quantize non-finite values")
        scaled = np.abs(np.ldexp(x, self._f))
        whole = np.floor(scaled)
        mag = whole + (scaled - whole >= 0.5)
        # clip before the integer cast; the saturation count is preserved
        mag = np.minimum(mag, float(self._hi) + 2.0)
        signed = np.where(x < 0, -mag, mag)
        if self.dtype is object:
            m = np.array([int(v) for v in signed.reshape(-1)], dtype=object).reshape(
                signed.shape
            )
        else:
            m = signed.astype(np.int64)
        return self._saturate(m)

    def lower(self, a) -> np.ndarray:
        return np.ldexp(np.asarray(a).astype(float), -self._f)

    def zeros(self, shape):
        return np.zeros(shape, dtype=self.dtype)

    def add(self, a, b):
        self._count("add", np.size(a))
        return self._saturate(self._asarray(a) + self._asarray(b))

    def sub(self, a, b):
        self._count("add", np.size(a))
        return self._saturate(self._asarray(a) - self._asarray(b))

    def neg(self, a):
        return self._saturate(-self._asarray(a))

    def mul(self, a, b):
        self._count_mul(a, b)
        product = self._asarray(a) * self._asarray(b)
        return self._saturate(self._round_shift(product, self._f))

    def matmul(self, a, b):
        self._count_matmul(a, b)
        a = self._asarray(a)
        b = self._asarray(b)
        if self.accumulate == "wide":
            return self._saturate(self._round_shift(a @ b, self._f))
        # per-op: round every product, saturate the running sum
        a2 = a.reshape(1, -1) if a.ndim == 1 else a
        b2 = b.reshape(-1, 1) if b.ndim == 1 else b
        acc = self.zeros((a2.shape[0], b2.shape[1]))
        for k in range(a2.shape[1]):
            term = self._round_shift(a2[:, k : k + 1] * b2[k : k + 1, :], self._f)
            acc = self._saturate(acc + term)
        if a.ndim == 1 and b.ndim == 1:
            return acc.reshape(())
        if a.ndim == 1:
            return acc.reshape(-1)
        if b.ndim == 1:
            return acc.reshape(-1)
        return acc

    def reciprocal(self, a):
        self._count("div", np.size(a))
        return self.lift(1.0 / self.lower(a))

    def mul_scaled(self, a, b, k: int):
        self._count_mul(a, b)
        product = self._asarray(a) * self._asarray(b)
        shift = self._f - int(k)
        if shift >= 0:
            return self._saturate(self._round_shift(product, shift))
        if self.dtype is not object and 2 * self.fmt.width - shift > 62:
            wide = np.array(product, dtype=object) << -shift
            return self._saturate(
                np.array(np.minimum(np.maximum(wide, self._lo - 1), self._hi + 1))
            )
        return self._saturate(product << -shift)

    def product_exponent(self, a, b) -> int:
        m = abs(int(np.asarray(a).reshape(()))) * abs(int(np.asarray(b).reshape(())))
        if m == 0:
            return 0
        return m.bit_length() - 2 * self._f

    def __repr__(self) -> str:
        return (
            f"FixedPointArithmetic({self.fmt}, rounding={self.rounding!r}, "
            f"accumulate={self.accumulate!r})"
        )
