import re
import threading
from dataclasses import dataclass, field
from typing import Dict

MAX_WIDTH = 64

_FORMAT_RE = re.compile(r"^\s*Q(\d+)\.(\d+)\s*$", re.IGNORECASE)


@dataclass(frozen=True, order=True)
class FxpFormat:
    """Signed fixed-point format: ``n_int`` integer bits (sign included) and
    ``n_frac`` fractional bits."""

    n_int: int
    n_frac: int

    def __post_init__(self):
        if self.n_int < 1:
            raise ValueError(f"n_int must be >= 1, got {self.n_int}")
        if self.n_frac < 0:
            raise ValueError(f"n_frac must be >= 0, got {self.n_frac}")
        if self.width > MAX_WIDTH:
            raise ValueError(f"total width {self.width} exceeds {MAX_WIDTH} bits")

    @property
    def width(self) -> int:
        return self.n_int + self.n_frac

    @property
    def scale(self) -> int:
        return 1 << self.n_frac

    @property
    def min_mantissa(self) -> int:
        return -(1 << (self.width - 1))

    @property
    def max_mantissa(self) -> int:
        return (1 << (self.width - 1)) - 1

    @property
    def resolution(self) -> float:
        return 1.0 / self.scale

    @property
    def error_bound(self) -> float:
        """Worst-case rounding error of an in-range quantization, 2^-(n_frac+1)."""
        return 2.0 ** (-self.n_frac - 1)

    @property
    def max_value(self) -> float:
        return self.max_mantissa / self.scale

    @property
    def min_value(self) -> float:
        return self.min_mantissa / self.scale

    @classmethod
    def parse(cls, text: str) -> "FxpFormat":
        """Parse a ``"Qi.f"`` format string such as ``"Q12.12"``."""
        match = _FORMAT_RE.match(text)
        if not match:
            raise ValueError(f"invalid fixed-point format {text!r}, expected 'Qi.f'")
        return cls(int(match.group(1)), int(match.group(2)))

    def __str__(self) -> str:
        return f"Q{self.n_int}.{self.n_frac}"


# 24-bit arm format, used when nothing else fixes one
DEFAULT_FORMAT = FxpFormat(12, 12)


@dataclass(frozen=True)
class FxpValue:
    """A mantissa carried in a fixed-point format; real value is mantissa / 2^n_frac."""

    mantissa: int
    fmt: FxpFormat

    def __post_init__(self):
        if not self.fmt.min_mantissa <= self.mantissa <= self.fmt.max_mantissa:
            raise ValueError(f"mantissa {self.mantissa} outside {self.fmt}")

    def to_real(self) -> float:
        return self.mantissa / self.fmt.scale


@dataclass
class FxpStats:
    """Saturation events and per-variable peak magnitudes observed in one run."""

    saturations: int = 0
    max_abs: Dict[str, float] = field(default_factory=dict)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def record_saturation(self, count: int = 1):
        if count:
            with self._lock:
                self.saturations += int(count)

    def observe(self, name: str, magnitude: float):
        with self._lock:
            if magnitude > self.max_abs.get(name, 0.0) or name not in self.max_abs:
                self.max_abs[name] = float(magnitude)

    def merge(self, other: "FxpStats") -> "FxpStats":
        """Fold ``other`` into this record and return it."""
        self.record_saturation(other.saturations)
        for name, value in sorted(other.max_abs.items()):
            self.observe(name, value)
        return self

    @property
    def peak(self) -> float:
        return max(self.max_abs.values(), default=0.0)

    def to_dict(self) -> dict:
        return {
            "saturations": self.saturations,
            "max_abs": {k: self.max_abs[k] for k in sorted(self.max_abs)},
        }
