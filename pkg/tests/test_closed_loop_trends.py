import numpy as np

from app.models.fixed_point import FxpFormat
from app.schemas.run_config import ControllerConfig, MpcConfig, SimConfig
from app.services.icms import QuantSetup, initial_states, pair_metrics, rollout_pairs

SIM = SimConfig(steps=300)
SEEDS = 5


def median_error(model, controller_cfg, fmt, sim=SIM, seeds=SEEDS):
    starts = initial_states(model, sim, seeds, seed=0)
    outcomes = rollout_pairs(model, controller_cfg, QuantSetup(fmt), sim, starts, workers=4)
    return pair_metrics(outcomes)[0]


def test_pid_error_shrinks_with_fraction_bits(iiwa):
    pid = ControllerConfig(kind="pid")
    errors = [median_error(iiwa, pid, FxpFormat(12, n_frac)) for n_frac in (8, 12, 16)]
    assert errors[0] > errors[1] > errors[2]
    assert errors[1] < 5e-4


def test_model_based_controllers_are_less_sensitive_than_pid(iiwa):
    sim = SimConfig(steps=100)
    fmt = FxpFormat(12, 12)
    mpc = MpcConfig(horizon=5, iterations=2, replan_interval=10)
    errors = {
        kind: median_error(iiwa, cfg, fmt, sim=sim, seeds=3)
        for kind, cfg in (
            ("pid", ControllerConfig(kind="pid")),
            ("lqr", ControllerConfig(kind="lqr")),
            ("mpc", ControllerConfig(kind="mpc", mpc=mpc)),
        )
    }
    assert np.isfinite(list(errors.values())).all()
    assert errors["lqr"] <= errors["pid"]
    assert errors["mpc"] <= errors["pid"]
