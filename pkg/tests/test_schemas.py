import numpy as np
import pytest

from app.models.fixed_point import FxpFormat
from app.schemas.run_config import (
    HwConfig,
    PidConfig,
    RunConfig,
    SearchConstraints,
    SimConfig,
)


def test_run_config_with_fixed_format():
    cfg = RunConfig(robot="iiwa", fixed_format="Q12.20")
    assert cfg.format == FxpFormat(12, 20)
    assert cfg.search is None
    assert cfg.controller.kind == "pid"
    assert cfg.hw.family == "dsp58"


def test_run_config_with_search():
    cfg = RunConfig(robot="iiwa", search={"mode": "dsp48"})
    assert cfg.format is None
    assert cfg.search.mode == "dsp48"


@pytest.mark.parametrize(
    "extra",
    [{}, {"fixed_format": "Q12.20", "search": {}}],
)
def test_run_config_needs_exactly_one_precision_source(extra):
    with pytest.raises(ValueError, match="exactly one"):
        RunConfig(robot="iiwa", **extra)


def test_run_config_rejects_unknown_fields_and_bad_values():
    with pytest.raises(ValueError):
        RunConfig(robot="iiwa", fixed_format="Q12.20", colour="red")
    with pytest.raises(ValueError):
        RunConfig(robot="iiwa", fixed_format="Q12")
    with pytest.raises(ValueError):
        RunConfig(robot="iiwa", fixed_format="Q12.20", seed=-1)
    with pytest.raises(ValueError):
        RunConfig(robot="iiwa", fixed_format="Q12.20", rounding="stochastic")


def test_base_dir_is_not_serialized():
    cfg = RunConfig(robot="iiwa", fixed_format="Q12.20")
    assert "base_dir" not in cfg.model_dump()


def test_hw_config_defaults_and_bounds():
    hw = HwConfig()
    assert hw.budget == 5073
    assert hw.minv_variant == "deferred"
    assert hw.horizons[0] == 1
    with pytest.raises(ValueError):
        HwConfig(family="dsp99")
    with pytest.raises(ValueError):
        HwConfig(budget=-1)
    with pytest.raises(ValueError):
        HwConfig(clock_hz=0.0)


def test_pid_gains_broadcast_per_joint():
    kp, ki, kd = PidConfig(kp=[1.0, 2.0, 3.0], ki=0.0, kd=5.0).gains(3)
    np.testing.assert_array_equal(kp, [1.0, 2.0, 3.0])
    np.testing.assert_array_equal(kd, [5.0, 5.0, 5.0])
    with pytest.raises(ValueError):
        PidConfig(kp=float("nan"))


def test_sim_config_metric_validation():
    with pytest.raises(ValueError):
        SimConfig(metrics=["energy"])
    with pytest.raises(ValueError):
        SimConfig(metrics=[])
    with pytest.raises(ValueError):
        SimConfig(weights={"trajectory": 0.0})


def test_search_constraint_defaults():
    cons = SearchConstraints()
    assert cons.tolerances == {"trajectory": 5e-4}
    assert cons.prune_factor == 1.2
    with pytest.raises(ValueError):
        SearchConstraints(tolerances={"trajectory": 0.0})
