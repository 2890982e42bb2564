from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Tuple

from app.exceptions import CostTableError

DSP48 = "dsp48"
DSP58 = "dsp58"

DEFAULT_COSTS: Dict[str, Dict[int, int]] = {
    DSP48: {18: 1, 32: 4},
    DSP58: {24: 1, 32: 2},
}

UnitKey = Tuple[str, str, int]


@dataclass(frozen=True)
class DspCostTable:
    """DSP primitives consumed by one MAC, per family and operand width."""

    costs: Mapping[str, Mapping[int, int]] = field(
        default_factory=lambda: {k: dict(v) for k, v in DEFAULT_COSTS.items()}
    )

    def __post_init__(self):
        for family, table in self.costs.items():
            previous = 0
            for width in sorted(table):
                cost = table[width]
                if cost < 1:
                    raise CostTableError(f"{family}: cost for {width} bits must be >= 1")
                if cost < previous:
                    raise CostTableError(f"{family}: costs must not decrease with width")
                previous = cost

    @classmethod
    def from_config(cls, overrides: Optional[Mapping[str, Mapping]] = None) -> "DspCostTable":
        costs = {k: dict(v) for k, v in DEFAULT_COSTS.items()}
        for family, table in (overrides or {}).items():
            costs.setdefault(family, {}).update({int(w): int(c) for w, c in table.items()})
        return cls(costs)

    def widths(self, family: str) -> List[int]:
        if family not in self.costs:
            raise CostTableError(f"unknown DSP family {family!r}")
        return sorted(self.costs[family])

    def lookup(self, width: int, family: str) -> int:
        """Cost of the narrowest table entry that holds ``width``."""
        for entry in self.widths(family):
            if width <= entry:
                return self.costs[family][entry]
        raise CostTableError(
            f"{width}-bit operands exceed the {family} table ({self.widths(family)})"
        )


@dataclass(frozen=True)
class UnitProfile:
    """One pipeline unit: a (module, pass, joint) stage and its work per task."""

    module: str
    pass_: str
    joint: int
    macs: int
    divisions: int = 0

    def __post_init__(self):
        if self.macs < 0 or self.divisions < 0:
            raise ValueError("operation counts must be non-negative")

    @property
    def key(self) -> UnitKey:
        return (self.module, self.pass_, self.joint)

    def to_dict(self) -> dict:
        return {
            "module": self.module,
            "pass": self.pass_,
            "joint": self.joint,
            "macs": self.macs,
            "divisions": self.divisions,
        }


@dataclass
class PipelinePlan:
    reuse: bool
    family: str
    width: int
    budget: int
    allocation: Dict[UnitKey, int]
    module_dsps: Dict[str, int]
    module_ii: Dict[str, int]
    function_ii: Dict[str, int]
    shared: Dict[str, int]
    owners: Dict[str, Dict[str, str]]
    dividers: int
    latency_cycles: Dict[str, int]
    throughput: Dict[str, float]
    clock_hz: float
    minv_variant: str

    @property
    def total_dsps(self) -> int:
        return sum(self.module_dsps.values()) + sum(self.shared.values())

    def latency(self, function: str) -> float:
        return self.latency_cycles[function] / self.clock_hz

    def to_dict(self) -> dict:
        units = [
            {"module": m, "pass": p, "joint": j, "dsps": self.allocation[(m, p, j)]}
            for (m, p, j) in sorted(self.allocation)
        ]
        return {
            "reuse": self.reuse,
            "family": self.family,
            "width": self.width,
            "budget": self.budget,
            "total_dsps": self.total_dsps,
            "units": units,
            "module_dsps": dict(sorted(self.module_dsps.items())),
            "shared": dict(sorted(self.shared.items())),
            "owners": {k: dict(sorted(v.items())) for k, v in sorted(self.owners.items())},
            "module_ii": dict(sorted(self.module_ii.items())),
            "function_ii": dict(sorted(self.function_ii.items())),
            "dividers": self.dividers,
            "latency_cycles": dict(sorted(self.latency_cycles.items())),
            "throughput": dict(sorted(self.throughput.items())),
            "clock_hz": self.clock_hz,
            "minv_variant": self.minv_variant,
        }


@dataclass(frozen=True)
class ControlRateEstimate:
    horizon: int
    iterations: int
    rate_hz: float

    def __post_init__(self):
        if not self.rate_hz > 0:
            raise ValueError("control rate must be positive")
