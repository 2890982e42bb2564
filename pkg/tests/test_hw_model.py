import pytest

from app.exceptions import CostTableError, InfeasibleBudgetError
from app.models.fixed_point import FxpFormat
from app.models.hardware import ControlRateEstimate, DspCostTable, UnitProfile
from app.schemas.run_config import HwConfig
from app.services.hw_model import (
    DSP_DR,
    budget_sweep,
    compare_minv_variants,
    control_rate,
    count_macs,
    divider_count,
    divider_utilization,
    estimate_perf,
    horizon_sweep,
    mac_dsp_cost,
    minimum_budget,
    plan_pipeline,
    profile_functions,
    reuse_savings,
)
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
)

Q12_12 = FxpFormat(12, 12)

ID_ONLY = {
    "ID": [UnitProfile(RNEA, FORWARD, 0, 10), UnitProfile(RNEA, BACKWARD, 0, 6)],
}

RNEA_UNITS = [UnitProfile(RNEA, FORWARD, 0, 8), UnitProfile(RNEA, BACKWARD, 0, 8)]
SHARED = {
    "ID": RNEA_UNITS,
    "dID": RNEA_UNITS + [UnitProfile(DRNEA, FORWARD, 0, 32), UnitProfile(DRNEA, BACKWARD, 0, 32)],
}

DFD = {
    "dFD": [
        UnitProfile(RNEA, FORWARD, 0, 12),
        UnitProfile(RNEA, BACKWARD, 0, 6),
        UnitProfile(DRNEA, FORWARD, 0, 24),
        UnitProfile(DRNEA, BACKWARD, 0, 12),
        UnitProfile(MINV, BACKWARD, 0, 10),
        UnitProfile(MINV, DIVIDE, 0, 0, 1),
        UnitProfile(MINV, FORWARD, 0, 10),
    ]
}


def test_cost_table_rounds_up_to_next_width():
    table = DspCostTable()
    assert table.lookup(18, "dsp48") == 1
    assert table.lookup(24, "dsp48") == 4
    assert table.lookup(20, "dsp58") == 1
    assert table.lookup(30, "dsp58") == 2
    assert mac_dsp_cost(24, "dsp58") == 1


def test_cost_table_errors():
    with pytest.raises(CostTableError):
        DspCostTable().lookup(40, "dsp58")
    with pytest.raises(CostTableError):
        DspCostTable().lookup(16, "dsp99")
    with pytest.raises(CostTableError):
        DspCostTable({"dsp58": {16: 2, 32: 1}})


def test_cost_table_overrides():
    table = DspCostTable.from_config({"dsp58": {"48": 3}})
    assert table.lookup(40, "dsp58") == 3
    assert table.lookup(24, "dsp58") == 1


def test_unit_profile_rejects_negative_counts():
    with pytest.raises(ValueError):
        UnitProfile(RNEA, FORWARD, 0, -1)


def test_divider_sharing():
    assert divider_count(7, 3) == 3
    assert divider_count(6, 3) == 2
    assert divider_utilization(7, 3, 3) == pytest.approx(7 / 9)
    with pytest.raises(ValueError):
        divider_count(0, 3)
    with pytest.raises(ValueError):
        divider_count(3, 0)


def test_independent_plan_at_generous_budget():
    plan = plan_pipeline(ID_ONLY, Q12_12, "dsp58", 16, reuse=False)
    assert plan.function_ii == {"ID": 1}
    assert plan.total_dsps == 16
    assert plan.allocation == {(RNEA, FORWARD, 0): 10, (RNEA, BACKWARD, 0): 6}


def test_independent_plan_at_tight_budget():
    hw = HwConfig(stage_depth=4)
    plan = plan_pipeline(ID_ONLY, Q12_12, "dsp58", 8, reuse=False, hw=hw)
    assert plan.function_ii == {"ID": 2}
    assert plan.total_dsps == 8
    assert plan.latency_cycles == {"ID": 12}
    assert plan.throughput["ID"] == pytest.approx(hw.clock_hz / 2)
    assert plan.latency("ID") == pytest.approx(12 / hw.clock_hz)
    assert estimate_perf(plan)["ID"] == (plan.latency("ID"), plan.throughput["ID"])


def test_infeasible_budget_reports_minimum():
    with pytest.raises(InfeasibleBudgetError) as excinfo:
        plan_pipeline(ID_ONLY, Q12_12, "dsp58", 1, reuse=False)
    assert excinfo.value.minimum == 2
    assert minimum_budget(ID_ONLY) == 2


def test_wider_operands_cost_more_dsps():
    plan = plan_pipeline(ID_ONLY, FxpFormat(12, 20), "dsp58", 32, reuse=False)
    assert plan.function_ii == {"ID": 1}
    assert plan.total_dsps == 32
    with pytest.raises(InfeasibleBudgetError):
        plan_pipeline(ID_ONLY, FxpFormat(12, 20), "dsp58", 1, reuse=False)


def test_reuse_lends_idle_drnea_multipliers():
    hw = HwConfig(lanes=4)
    off = plan_pipeline(SHARED, Q12_12, "dsp58", 100, reuse=False, hw=hw)
    on = plan_pipeline(SHARED, Q12_12, "dsp58", 100, reuse=True, hw=hw)
    assert off.function_ii == {"ID": 2, "dID": 8}
    assert off.module_dsps == {RNEA: 8, DRNEA: 8}
    assert off.total_dsps == 16

    assert on.function_ii == off.function_ii
    assert on.module_dsps == {RNEA: 2, DRNEA: 2}
    assert on.shared == {DSP_DR: 6}
    assert on.owners["ID"][DSP_DR] == RNEA
    assert on.owners["dID"][DSP_DR] == DRNEA
    assert on.total_dsps == 10
    assert reuse_savings(off, on) == pytest.approx(0.375)


def test_plan_detects_minv_variant_from_division_placement():
    deferred = plan_pipeline(DFD, Q12_12, "dsp58", 1000, reuse=False)
    assert deferred.minv_variant == DEFERRED
    original_profiles = {
        "dFD": [u for u in DFD["dFD"] if u.pass_ != DIVIDE] + [UnitProfile(MINV, BACKWARD, 1, 10, 1)]
    }
    original = plan_pipeline(original_profiles, Q12_12, "dsp58", 1000, reuse=False)
    assert original.minv_variant == ORIGINAL
    assert deferred.dividers == 1


def test_plan_needs_units():
    with pytest.raises(ValueError):
        plan_pipeline({"ID": []}, Q12_12, "dsp58", 10, reuse=False)


def test_control_rate_model():
    plan = plan_pipeline(DFD, Q12_12, "dsp58", 1000, reuse=False)
    one = control_rate(plan, 1, 1)
    assert one.rate_hz == pytest.approx(1.0 / plan.latency("dFD"))
    eight = control_rate(plan, 8, 10)
    expected = 1.0 / (10 * (plan.latency("dFD") + 7 / plan.throughput["dFD"]))
    assert eight.rate_hz == pytest.approx(expected)
    with pytest.raises(ValueError):
        control_rate(plan, 0, 1)
    with pytest.raises(ValueError):
        control_rate(plan_pipeline(ID_ONLY, Q12_12, "dsp58", 16, reuse=False), 4, 1)
    with pytest.raises(ValueError):
        ControlRateEstimate(1, 1, 0.0)


def test_horizon_sweep_rate_falls_with_horizon():
    plan = plan_pipeline(DFD, Q12_12, "dsp58", 1000, reuse=False)
    frame = horizon_sweep({"off": plan}, [1, 4, 16], iterations=10)
    assert list(frame["horizon"]) == [1, 4, 16]
    rates = list(frame["rate_hz"])
    assert rates[0] > rates[1] > rates[2]
    assert set(frame["plan"]) == {"off"}


def test_budget_sweep_skips_infeasible_budgets():
    frame = budget_sweep(DFD, Q12_12, "dsp58", [200, 2, 50], HwConfig())
    assert list(frame["budget"]) == [50, 50, 200, 200]
    assert list(frame["reuse"]) == [False, True, False, True]
    assert "control_rate_hz" in frame.columns


def test_iiwa_profiles(iiwa):
    profiles = profile_functions(iiwa)
    assert set(profiles) == set(FUNCTIONS)
    assert {u.module for u in profiles["ID"]} == {RNEA}
    assert {u.module for u in profiles["dFD"]} == {RNEA, DRNEA, MINV}
    assert sum(u.divisions for u in profiles["Minv"] if u.pass_ == DIVIDE) == iiwa.n
    original = count_macs(iiwa, "Minv", ORIGINAL)
    assert sum(u.divisions for u in original if u.pass_ == BACKWARD) == iiwa.n


def test_iiwa_reuse_saves_dsps(iiwa):
    profiles = profile_functions(iiwa)
    hw = HwConfig()
    off = plan_pipeline(profiles, Q12_12, "dsp58", 5073, False, hw, parents=iiwa.parents)
    on = plan_pipeline(profiles, Q12_12, "dsp58", 5073, True, hw, parents=iiwa.parents)
    assert on.total_dsps <= off.total_dsps
    for function, ii in off.function_ii.items():
        assert on.function_ii[function] <= ii
    assert off.to_dict()["total_dsps"] == off.total_dsps


def test_deferred_minv_is_twice_as_fast(iiwa):
    result = compare_minv_variants(iiwa, Q12_12, "dsp58", 5073)
    assert result["deferred_cycles"] < result["original_cycles"]
    assert result["speedup"] >= 2.0


def test_original_minv_stage_waits_for_its_division():
    hw = HwConfig(stage_depth=4, divider_depth=20, fifo_depth=2)
    original = {"Minv": [UnitProfile(MINV, BACKWARD, 0, 8, 1), UnitProfile(MINV, FORWARD, 0, 8)]}
    deferred = {
        "Minv": [
            UnitProfile(MINV, BACKWARD, 0, 8),
            UnitProfile(MINV, DIVIDE, 0, 0, 1),
            UnitProfile(MINV, FORWARD, 0, 8),
        ]
    }
    slow = plan_pipeline(original, Q12_12, "dsp58", 16, reuse=False, hw=hw)
    fast = plan_pipeline(deferred, Q12_12, "dsp58", 16, reuse=False, hw=hw)
    assert slow.latency_cycles == {"Minv": (4 + 1 + 20 + 4) + (4 + 1)}
    assert fast.latency_cycles == {"Minv": (4 + 1) + (2 + 20) + (4 + 1)}


def test_estimate_perf_at_another_clock():
    plan = plan_pipeline(ID_ONLY, Q12_12, "dsp58", 8, reuse=False, hw=HwConfig(stage_depth=4))
    latency, throughput = estimate_perf(plan, clock_hz=100e6)["ID"]
    assert latency == pytest.approx(12 / 100e6)
    assert throughput == pytest.approx(50e6)
    assert estimate_perf(plan)["ID"][1] == pytest.approx(plan.clock_hz / 2)


def test_reuse_lends_only_within_a_joint_slot():
    rnea = [UnitProfile(RNEA, FORWARD, 0, 8), UnitProfile(RNEA, FORWARD, 1, 8)]
    profiles = {"ID": rnea, "dID": rnea + [UnitProfile(DRNEA, FORWARD, 0, 32)]}
    hw = HwConfig(lanes=4)
    off = plan_pipeline(profiles, Q12_12, "dsp58", 100, reuse=False, hw=hw)
    on = plan_pipeline(profiles, Q12_12, "dsp58", 100, reuse=True, hw=hw)
    assert off.total_dsps == 12
    # joint 1 has no idle ΔRNEA stage to borrow from
    assert on.shared == {DSP_DR: 3}
    assert on.module_dsps == {RNEA: 5, DRNEA: 1}
    assert on.function_ii == off.function_ii == {"ID": 2, "dID": 8}
    assert reuse_savings(off, on) == pytest.approx(0.25)


def _savings(model, budget):
    profiles = profile_functions(model)
    plans = [
        plan_pipeline(profiles, Q12_12, "dsp58", budget, reuse, parents=model.parents)
        for reuse in (False, True)
    ]
    return reuse_savings(*plans)


def test_reuse_savings_grow_with_robot_size(iiwa, atlas):
    arm = _savings(iiwa, 10**6)
    humanoid = _savings(atlas, 10**6)
    assert 0.0 <= arm < 0.10
    assert humanoid > arm
    assert 0.0 <= _savings(iiwa, 5073) < 0.10
