"""Analytical accelerator model.

Every RBD function is a set of pipeline units ``(module, pass, joint)``. A unit
with ``W`` DSP-cycles of multiply work per task and ``d`` DSPs has initiation
interval ``ceil(W / d)``; a module runs at the II of its slowest unit and a
function mode at the II of its slowest active module.

Without reuse each module is provisioned on its own. With reuse, the idle
multipliers of ΔRNEA and M⁻¹ (groups DSP_DR and DSP_MR) are lent to the RNEA
stage of the same joint slot when RNEA runs alone, so that stage only keeps
what the collaborative modes need.
"""

import math
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import pandas as pd

from app.exceptions import InfeasibleBudgetError
from app.models.fixed_point import FxpFormat
from app.models.hardware import (
    ControlRateEstimate,
    DspCostTable,
    PipelinePlan,
    UnitKey,
    UnitProfile,
)
from app.models.robot import RobotModel
from app.schemas.run_config import HwConfig
from app.services.rbd_kernels import (
    BACKWARD,
    DEFERRED,
    DIVIDE,
    DRNEA,
    FORWARD,
    FUNCTIONS,
    MINV,
    ORIGINAL,
    RNEA,
    profile_counts,
)
from app.utils.logging import get_logger

logger = get_logger(__name__)

DSP_DR = "DSP_DR"
DSP_MR = "DSP_MR"
GROUP_LENDER = {DSP_DR: DRNEA, DSP_MR: MINV}

# shared-group owner in every function mode
OWNERSHIP: Dict[str, Dict[str, str]] = {
    "ID": {DSP_DR: RNEA, DSP_MR: RNEA},
    "Minv": {DSP_DR: RNEA, DSP_MR: MINV},
    "FD": {DSP_DR: DRNEA, DSP_MR: MINV},
    "dID": {DSP_DR: DRNEA, DSP_MR: MINV},
    "dFD": {DSP_DR: DRNEA, DSP_MR: MINV},
}

Loads = Dict[UnitKey, int]


def mac_dsp_cost(width: int, family: str, table: Optional[DspCostTable] = None) -> int:
    """DSP primitives per MAC at ``width`` bits."""
    return (table or DspCostTable()).lookup(width, family)


def count_macs(
    model: RobotModel, function: str, variant: str = DEFERRED, seed: int = 0
) -> List[UnitProfile]:
    """Per-unit multiplications and divisions of one ``function`` task."""
    counter = profile_counts(model, function, variant=variant, seed=seed)
    return [
        UnitProfile(m, p, j, counts.get("mul", 0), counts.get("div", 0))
        for (m, p, j), counts in counter.by_unit().items()
        if m
    ]


def profile_functions(
    model: RobotModel, variant: str = DEFERRED, functions: Sequence[str] = FUNCTIONS
) -> Dict[str, List[UnitProfile]]:
    return {f: count_macs(model, f, variant) for f in functions}


def divider_count(n_units: int, ii: int) -> int:
    """Dividers needed when ``n_units`` staggered units share them at interval ``ii``."""
    if n_units < 1 or ii < 1:
        raise ValueError("divider sharing needs at least one unit and II >= 1")
    return math.ceil(n_units / ii)


def divider_utilization(n_units: int, dividers: int, ii: int) -> float:
    return n_units / (dividers * ii)


# allocation helpers


def _need(loads: Iterable[int], ii: int) -> int:
    return sum(math.ceil(w / ii) for w in loads if w > 0)


def _min_ii(loads: Sequence[int], dsps: int) -> int:
    """Smallest II reachable by spreading ``dsps`` over ``loads``."""
    positive = [w for w in loads if w > 0]
    if not positive:
        return 1
    lo, hi = 1, max(positive)
    if _need(positive, hi) > dsps:
        raise ValueError("fewer DSPs than loaded units")
    while lo < hi:
        mid = (lo + hi) // 2
        if _need(positive, mid) <= dsps:
            hi = mid
        else:
            lo = mid + 1
    return lo


def _distribute(loads: Mapping[UnitKey, int], dsps: int) -> Dict[UnitKey, int]:
    """Per-unit DSPs reaching the smallest module II; spare DSPs go to the heaviest unit."""
    ii = _min_ii(list(loads.values()), dsps)
    out = {u: (math.ceil(w / ii) if w > 0 else 0) for u, w in loads.items()}
    spare = dsps - sum(out.values())
    if spare > 0 and out:
        heaviest = max(sorted(loads), key=lambda u: loads[u])
        out[heaviest] += spare
    return out


def _unit_ii(load: int, dsps: int) -> int:
    return math.ceil(load / dsps) if load > 0 else 1


def _module_loads(loads: Loads, module: str) -> Loads:
    return {u: w for u, w in loads.items() if u[0] == module}


class _Workload:
    """MAC work in DSP-cycles per unit for every function mode."""

    def __init__(self, profiles: Mapping[str, Sequence[UnitProfile]], cost: int):
        self.cost = cost
        self.functions = [f for f in FUNCTIONS if f in profiles] + sorted(
            f for f in profiles if f not in FUNCTIONS
        )
        self.loads: Dict[str, Loads] = {}
        self.divisions: Dict[str, Dict[UnitKey, int]] = {}
        self.stages: Dict[str, List[UnitKey]] = {}
        for f in self.functions:
            units = profiles[f]
            self.loads[f] = {u.key: u.macs * cost for u in units if u.pass_ != DIVIDE}
            self.divisions[f] = {u.key: u.divisions for u in units if u.divisions}
            self.stages[f] = [u.key for u in units]
        self.units = sorted({u for f in self.functions for u in self.loads[f]})
        self.worst: Loads = {
            u: max(self.loads[f].get(u, 0) for f in self.functions) for u in self.units
        }
        self.modules = sorted({u[0] for u in self.units})

    def active(self, function: str) -> List[str]:
        return sorted({u[0] for u in self.loads[function]})

    def need(self, function: str, unit: UnitKey, ii: int) -> int:
        load = self.loads[function].get(unit, 0)
        return math.ceil(load / ii) if load > 0 else 0


def _provision(work: _Workload, targets: Mapping[str, int]) -> Dict[UnitKey, int]:
    """Per-unit DSPs meeting the II target of every mode the unit takes part in."""
    return {
        u: max(work.need(f, u, targets[f]) for f in work.functions) for u in work.units
    }


def _mode_iis(work: _Workload, per_mode_alloc) -> Tuple[Dict[str, int], Dict[str, int]]:
    function_ii: Dict[str, int] = {}
    module_ii: Dict[str, int] = {}
    for f in work.functions:
        alloc = per_mode_alloc(f)
        worst = 1
        for m in work.active(f):
            ii = max(
                [_unit_ii(w, alloc[u]) for u, w in _module_loads(work.loads[f], m).items()],
                default=1,
            )
            module_ii[m] = max(module_ii.get(m, 1), ii)
            worst = max(worst, ii)
        function_ii[f] = worst
    return function_ii, module_ii


def _chain(parents: Sequence[int], latency: Mapping[int, int]) -> int:
    """Longest root-to-leaf sum of per-joint stage latencies."""
    acc: List[int] = []
    for j, p in enumerate(parents):
        acc.append(latency.get(j, 0) + (acc[p] if p >= 0 else 0))
    return max(acc, default=0)


def _latencies(
    work: _Workload,
    per_mode_alloc,
    parents: Sequence[int],
    hw: HwConfig,
    variant: str,
) -> Dict[str, int]:
    out: Dict[str, int] = {}
    for f in work.functions:
        alloc = per_mode_alloc(f)
        stage: Dict[Tuple[str, str], Dict[int, int]] = {}
        for u in work.stages[f]:
            m, p, j = u
            if p == DIVIDE:
                continue
            cycles = hw.stage_depth + (
                _unit_ii(work.loads[f][u], alloc[u]) if work.loads[f].get(u, 0) > 0 else 0
            )
            if variant == ORIGINAL and p == BACKWARD and work.divisions[f].get(u):
                # the pivot is formed, divided, then consumed by a second multiply round
                cycles += hw.divider_depth + hw.stage_depth
            stage.setdefault((m, p), {})[j] = cycles
        lat = {key: _chain(parents, per_joint) for key, per_joint in stage.items()}
        divide = (
            hw.fifo_depth + hw.divider_depth
            if any(p == DIVIDE for _, p, _ in work.stages[f])
            else 0
        )
        rnea = lat.get((RNEA, FORWARD), 0) + lat.get((RNEA, BACKWARD), 0)
        drnea = lat.get((DRNEA, FORWARD), 0) + lat.get((DRNEA, BACKWARD), 0)
        minv_back = lat.get((MINV, BACKWARD), 0) + divide
        minv_fwd = lat.get((MINV, FORWARD), 0)
        if MINV in work.active(f):
            # M⁻¹'s backward sweep runs beside the RNEA passes; its forward sweep waits for both
            out[f] = max(rnea + drnea, minv_back) + minv_fwd
        else:
            out[f] = rnea + drnea
    return out


def _dividers(work: _Workload, module_ii: Mapping[str, int]) -> int:
    users = {u for f in work.functions for u in work.divisions[f]}
    if not users:
        return 0
    return divider_count(len(users), module_ii.get(MINV, 1))


def _off_allocation(work: _Workload, budget: int, lanes_dsps: int) -> Dict[str, int]:
    """Module IIs of the independent plan fitting ``budget``."""
    base = {
        m: max(
            [math.ceil(w / lanes_dsps) for w in _module_loads(work.worst, m).values() if w > 0],
            default=1,
        )
        for m in work.modules
    }

    def total(floor: int) -> int:
        return sum(
            _need(_module_loads(work.worst, m).values(), max(base[m], floor))
            for m in work.modules
        )

    top = max(work.worst.values(), default=1) or 1
    minimum = total(top)
    if budget < minimum:
        raise InfeasibleBudgetError(budget, minimum)
    lo, hi = 1, top
    while lo < hi:
        mid = (lo + hi) // 2
        if total(mid) <= budget:
            hi = mid
        else:
            lo = mid + 1
    return {m: max(base[m], lo) for m in work.modules}


def _plan(
    work: _Workload,
    fmt: FxpFormat,
    family: str,
    budget: int,
    reuse: bool,
    hw: HwConfig,
    parents: Sequence[int],
    variant: str,
) -> PipelinePlan:
    lanes_dsps = hw.lanes * work.cost
    iis = _off_allocation(work, budget, lanes_dsps)
    worst_alloc = {
        u: (math.ceil(w / iis[u[0]]) if w > 0 else 0) for u, w in work.worst.items()
    }
    off_function_ii, _ = _mode_iis(work, lambda f: worst_alloc)
    # provisioned per mode
    off_alloc = _provision(work, off_function_ii)

    if not reuse:
        module_dsps = {m: 0 for m in work.modules}
        for u, d in off_alloc.items():
            module_dsps[u[0]] += d
        shared, owners = {}, {}
        allocation = off_alloc

        def per_mode(f):
            return off_alloc

    else:
        module_dsps, shared = _reuse_allocation(work, off_function_ii)
        owners = {f: dict(OWNERSHIP[f]) for f in work.functions if f in OWNERSHIP}
        allocation = {}
        for m in work.modules:
            allocation.update(_distribute(_module_loads(work.worst, m), module_dsps[m]))

        def per_mode(f):
            alloc: Dict[UnitKey, int] = {}
            for m in work.modules:
                owned = sum(
                    s for g, s in shared.items() if OWNERSHIP.get(f, {}).get(g) == m
                )
                alloc.update(
                    _distribute(_module_loads(work.loads[f], m), module_dsps[m] + owned)
                )
            return alloc

    function_ii, module_ii = _mode_iis(work, per_mode)
    latency = _latencies(work, per_mode, parents, hw, variant)
    plan = PipelinePlan(
        reuse=reuse,
        family=family,
        width=fmt.width,
        budget=budget,
        allocation=allocation,
        module_dsps=dict(module_dsps),
        module_ii=module_ii,
        function_ii=function_ii,
        shared=shared,
        owners=owners,
        dividers=_dividers(work, module_ii),
        latency_cycles=latency,
        throughput={f: hw.clock_hz / ii for f, ii in function_ii.items()},
        clock_hz=hw.clock_hz,
        minv_variant=variant,
    )
    logger.debug(
        f"Plan reuse={'on' if reuse else 'off'} at {fmt}/{family}: {plan.total_dsps} DSPs, "
        f"II {plan.function_ii}"
    )
    return plan


def _reuse_allocation(
    work: _Workload, targets: Mapping[str, int]
) -> Tuple[Dict[str, int], Dict[str, int]]:
    """Fewest DSPs meeting every mode's II target with shared groups lent to RNEA.

    A shared multiplier is wired within one joint slot: the RNEA stage at
    ``(pass, joint)`` only borrows from the ΔRNEA or M⁻¹ stage at the same pass
    and joint. Lender stages keep one DSP of their own.
    """
    provision = _provision(work, targets)
    module_dsps = {m: 0 for m in work.modules}
    for u, d in provision.items():
        module_dsps[u[0]] += d
    shared: Dict[str, int] = {}
    if RNEA not in module_dsps:
        return module_dsps, shared
    alone = [f for f in work.functions if work.active(f) == [RNEA]]
    together = [f for f in work.functions if RNEA in work.active(f) and f not in alone]
    spare = {
        u: d - 1 for u, d in provision.items() if u[0] in GROUP_LENDER.values() and d > 1
    }
    # the biggest idle module lends first
    lenders = sorted(
        (g for g, m in GROUP_LENDER.items() if m in module_dsps),
        key=lambda g: (-module_dsps[GROUP_LENDER[g]], g),
    )
    for u in sorted(_module_loads(work.worst, RNEA)):
        _, pass_, joint = u
        keep = max([work.need(f, u, targets[f]) for f in together] + [1])
        deficit = provision[u] - keep
        for group in lenders:
            slot = (GROUP_LENDER[group], pass_, joint)
            size = min(deficit, spare.get(slot, 0))
            if size <= 0:
                continue
            spare[slot] -= size
            shared[group] = shared.get(group, 0) + size
            module_dsps[slot[0]] -= size
            module_dsps[RNEA] -= size
            deficit -= size
    return module_dsps, shared


def plan_pipeline(
    profiles: Mapping[str, Sequence[UnitProfile]],
    fmt: FxpFormat,
    family: str,
    dsp_budget: int,
    reuse: bool,
    hw: Optional[HwConfig] = None,
    table: Optional[DspCostTable] = None,
    parents: Optional[Sequence[int]] = None,
) -> PipelinePlan:
    """DSP allocation, IIs and latencies for the functions in ``profiles``.

    ``parents`` gives the joint tree for latency chains (a serial chain when
    omitted). The reuse plan meets every per-mode II of the independent plan
    at the same budget with as few DSPs as possible.
    """
    hw = hw or HwConfig(family=family)
    cost = mac_dsp_cost(fmt.width, family, table)
    work = _Workload(profiles, cost)
    if not work.units:
        raise ValueError("profiles contain no pipeline units")
    if parents is None:
        joints = max(u[2] for f in work.functions for u in work.stages[f]) + 1
        parents = list(range(-1, joints - 1))
    division_passes = {(u[0], u[1]) for f in work.functions for u in work.divisions[f]}
    if (MINV, BACKWARD) in division_passes:
        variant = ORIGINAL
    elif (MINV, DIVIDE) in division_passes:
        variant = DEFERRED
    else:
        variant = hw.minv_variant
    return _plan(work, fmt, family, dsp_budget, reuse, hw, parents, variant)


def estimate_perf(
    plan: PipelinePlan, clock_hz: Optional[float] = None
) -> Dict[str, Tuple[float, float]]:
    """Per function: (latency in seconds, throughput in tasks per second).

    ``clock_hz`` rescales the plan to another clock; the plan's own clock by default.
    """
    clock = clock_hz or plan.clock_hz
    return {
        f: (plan.latency_cycles[f] / clock, clock / ii)
        for f, ii in sorted(plan.function_ii.items())
    }


def control_rate(plan: PipelinePlan, horizon: int, iterations: int) -> ControlRateEstimate:
    """MPC rate when every iteration streams ``horizon`` ΔFD tasks through the pipeline."""
    if horizon < 1 or iterations < 1:
        raise ValueError("horizon and iterations must be at least 1")
    if "dFD" not in plan.latency_cycles:
        raise ValueError("control rate needs a plan that includes dFD")
    period = iterations * (plan.latency("dFD") + (horizon - 1) / plan.throughput["dFD"])
    return ControlRateEstimate(horizon, iterations, 1.0 / period)


def reuse_savings(off: PipelinePlan, on: PipelinePlan) -> float:
    """Fraction of the independent plan's DSPs saved by reuse."""
    return (off.total_dsps - on.total_dsps) / off.total_dsps


def compare_minv_variants(
    model: RobotModel,
    fmt: FxpFormat,
    family: str,
    dsp_budget: int,
    hw: Optional[HwConfig] = None,
    table: Optional[DspCostTable] = None,
) -> Dict[str, float]:
    """Modeled M⁻¹ latency of the original and division-deferred recursions."""
    hw = hw or HwConfig(family=family)
    cycles = {}
    for variant in (ORIGINAL, DEFERRED):
        profiles = {"Minv": count_macs(model, "Minv", variant)}
        plan = plan_pipeline(profiles, fmt, family, dsp_budget, False, hw, table, model.parents)
        cycles[variant] = plan.latency_cycles["Minv"]
    return {
        "original_cycles": cycles[ORIGINAL],
        "deferred_cycles": cycles[DEFERRED],
        "speedup": cycles[ORIGINAL] / cycles[DEFERRED],
    }


def horizon_sweep(
    plans: Mapping[str, PipelinePlan], horizons: Sequence[int], iterations: int
) -> pd.DataFrame:
    rows = []
    for label in sorted(plans):
        plan = plans[label]
        for n in horizons:
            estimate = control_rate(plan, n, iterations)
            rows.append(
                {
                    "plan": label,
                    "reuse": plan.reuse,
                    "minv_variant": plan.minv_variant,
                    "total_dsps": plan.total_dsps,
                    "horizon": n,
                    "iterations": iterations,
                    "rate_hz": estimate.rate_hz,
                }
            )
    return pd.DataFrame(rows)


def budget_sweep(
    profiles: Mapping[str, Sequence[UnitProfile]],
    fmt: FxpFormat,
    family: str,
    budgets: Sequence[int],
    hw: HwConfig,
    table: Optional[DspCostTable] = None,
    parents: Optional[Sequence[int]] = None,
    horizon: int = 10,
) -> pd.DataFrame:
    """II, latency and control rate of both plans at every feasible budget."""
    rows = []
    for budget in sorted(budgets):
        for reuse in (False, True):
            try:
                plan = plan_pipeline(profiles, fmt, family, budget, reuse, hw, table, parents)
            except InfeasibleBudgetError as exc:
                logger.info(f"Budget {budget} skipped: {exc}")
                break
            row = {
                "budget": budget,
                "format": str(fmt),
                "reuse": reuse,
                "total_dsps": plan.total_dsps,
            }
            row.update({f"ii_{f}": ii for f, ii in sorted(plan.function_ii.items())})
            if "dFD" in plan.latency_cycles:
                row["latency_dFD_s"] = plan.latency("dFD")
                row["throughput_dFD"] = plan.throughput["dFD"]
                row["control_rate_hz"] = control_rate(plan, horizon, hw.iterations).rate_hz
            rows.append(row)
    return pd.DataFrame(rows)


def minimum_budget(profiles: Mapping[str, Sequence[UnitProfile]]) -> int:
    """One DSP per unit that does any multiply work."""
    units = {u.key for units in profiles.values() for u in units if u.macs > 0 and u.pass_ != DIVIDE}
    return len(units)
