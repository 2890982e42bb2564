import json
import math

import numpy as np
import pandas as pd
import pytest

from app.exceptions import DimensionError, InsufficientSamplesError, RolloutDivergenceError
from app.models.fixed_point import FxpFormat
from app.models.robot import JointState
from app.models.simulation import ErrorStats, RolloutFailure, Trajectory, TrajectoryPair
from app.schemas.run_config import ControllerConfig, PidConfig, SimConfig
from app.services.fixed_point import TRUNCATE
from app.services.icms import (
    QuantSetup,
    analyze_errors,
    default_target,
    depth_correlation,
    export_error_stats,
    export_trajectory_csv,
    fit_compensation,
    heuristic_sample_order,
    initial_state,
    initial_states,
    load_dataset,
    mechanical_energy,
    pair_metrics,
    rollout_pair,
    rollout_pairs,
    sample_states,
    step_plant,
    velocity_errors,
)
from app.services.rbd_kernels import ORIGINAL, bind

PID = ControllerConfig(kind="pid", pid=PidConfig(kp=100.0, ki=0.0, kd=20.0))
Q6_10 = FxpFormat(6, 10)
Q12_12 = FxpFormat(12, 12)


def short_sim(**overrides):
    return SimConfig(**{"steps": 100, **overrides})


def test_real_setup_reproduces_the_real_run(pendulum):
    pair = rollout_pair(pendulum, PID, QuantSetup(), short_sim(), seed=3)
    assert pair.steps == 100
    assert pair.fmt is None
    assert pair.metrics() == {"trajectory": 0.0, "posture": 0.0, "torque": 0.0}


def test_quantized_run_diverges_slightly(pendulum):
    pair = rollout_pair(pendulum, PID, QuantSetup(Q6_10), short_sim(), seed=3)
    assert pair.fmt == "Q6.10"
    np.testing.assert_array_equal(pair.real.q[0], pair.quantized.q[0])
    metrics = pair.metrics()
    assert 0.0 < metrics["trajectory"] < 0.05
    assert metrics["torque"] > 0.0


def test_rollout_is_deterministic(pendulum):
    a = rollout_pair(pendulum, PID, QuantSetup(Q6_10), short_sim(), seed=7)
    b = rollout_pair(pendulum, PID, QuantSetup(Q6_10), short_sim(), seed=7)
    np.testing.assert_array_equal(a.quantized.tau, b.quantized.tau)


def test_rollout_pairs_keep_start_order(pendulum):
    sim = short_sim(steps=20)
    starts = [JointState([0.05 * k], [0.0]) for k in range(4)]
    pairs = rollout_pairs(pendulum, PID, QuantSetup(Q6_10), sim, starts, workers=2)
    assert [p.real.q[0, 0] for p in pairs] == [0.0, 0.05, 0.1, pytest.approx(0.15)]
    assert [p.seed for p in pairs] == [0, 1, 2, 3]


def test_plant_rejects_quantized_kernels(pendulum):
    with pytest.raises(ValueError):
        step_plant(bind(pendulum, Q6_10), JointState([0.1], [0.0]), np.zeros(1), 1e-3)


def test_plant_rejects_non_positive_step(pendulum):
    with pytest.raises(ValueError):
        step_plant(pendulum, JointState([0.1], [0.0]), np.zeros(1), 0.0)


def test_plant_step_is_semi_implicit(pendulum):
    state = step_plant(pendulum, JointState([0.5], [1.0]), np.zeros(1), 1e-3)
    qdd = -9.81 * np.sin(0.5)
    assert state.qdd[0] == pytest.approx(qdd)
    assert state.qd[0] == pytest.approx(1.0 + 1e-3 * qdd)
    assert state.q[0] == pytest.approx(0.5 + 1e-3 * state.qd[0])


def test_plant_bound(pendulum):
    with pytest.raises(RolloutDivergenceError):
        step_plant(pendulum, JointState([0.5], [1.0]), np.zeros(1), 1e-3, bound=0.1)


def test_unforced_pendulum_keeps_its_energy(pendulum):
    state = JointState([0.5], [0.0])
    start = mechanical_energy(pendulum, state)
    assert start == pytest.approx(-9.81 * np.cos(0.5))
    for _ in range(1000):
        state = step_plant(pendulum, state, np.zeros(1), 1e-3)
    assert mechanical_energy(pendulum, state) == pytest.approx(start, abs=0.05)


def test_default_target(pendulum, iiwa):
    np.testing.assert_allclose(default_target(pendulum, SimConfig()).q, [0.0], atol=1e-12)
    assert default_target(pendulum, SimConfig(target=[0.3])).q[0] == 0.3
    with pytest.raises(DimensionError):
        default_target(iiwa, SimConfig(target=[0.3]))


def test_initial_state_is_seeded_and_within_limits(iiwa):
    sim = SimConfig(initial_offset=0.2)
    target = default_target(iiwa, sim)
    a = initial_state(iiwa, target, sim, seed=4)
    b = initial_state(iiwa, target, sim, seed=4)
    np.testing.assert_array_equal(a.q, b.q)
    assert np.all(np.abs(a.q - target.q) <= 0.2)
    assert np.all(a.q >= iiwa.lower_limits) and np.all(a.q <= iiwa.upper_limits)


def test_initial_states_from_dataset(pendulum, tmp_path):
    path = tmp_path / "states.csv"
    pd.DataFrame({"q0": [0.1, 0.2, 0.3], "qd0": [0.0, 0.5, -0.5]}).to_csv(path, index=False)
    states = initial_states(pendulum, SimConfig(dataset=str(path)), 5, seed=1)
    assert len(states) == 5
    assert {round(float(s.q[0]), 6) for s in states} <= {0.1, 0.2, 0.3}


def test_dataset_needs_enough_columns(iiwa, tmp_path):
    path = tmp_path / "short.csv"
    pd.DataFrame({"a": [0.1], "b": [0.2]}).to_csv(path, index=False)
    with pytest.raises(DimensionError):
        load_dataset(path, iiwa)


def test_heuristic_order_puts_fast_samples_first(iiwa):
    slow = JointState(np.zeros(7), np.full(7, 0.1))
    fast = JointState(np.zeros(7), np.full(7, 1.0))
    medium = JointState(np.zeros(7), np.full(7, 0.5))
    assert heuristic_sample_order([slow, fast, medium], iiwa) == [fast, medium, slow]


def test_sample_states_respect_limits(hyq):
    for s in sample_states(hyq, 20, seed=0):
        assert np.all(s.q >= hyq.lower_limits) and np.all(s.q <= hyq.upper_limits)
        assert np.all(np.abs(s.qd) <= hyq.velocity_limits)


def test_velocity_error_grows_with_depth(chain7):
    states = sample_states(chain7, 500, seed=0)
    errors = velocity_errors(chain7, QuantSetup(Q12_12), states)
    assert errors[-1] > errors[0]
    assert depth_correlation(chain7, errors) >= 0.8


def test_depth_correlation_of_flat_errors(chain7):
    assert depth_correlation(chain7, np.ones(7)) == 0.0


def test_analyze_errors_needs_pairs(pendulum):
    with pytest.raises(ValueError):
        analyze_errors([], pendulum, QuantSetup(Q6_10))


def test_analyze_errors_summary(pendulum):
    setup = QuantSetup(Q6_10)
    pairs = [rollout_pair(pendulum, PID, setup, short_sim(steps=30), seed=k) for k in range(2)]
    stats = analyze_errors(pairs, pendulum, setup, samples=20)
    assert stats.samples == 20
    assert stats.torque_error.shape == (30,)
    assert stats.trajectory_max == max(p.metrics()["trajectory"] for p in pairs)
    assert stats.minv_offdiag_mae == 0.0
    assert stats.to_dict()["velocity_error_by_depth"].keys() == {"1"}


def test_compensation_needs_samples(iiwa):
    with pytest.raises(InsufficientSamplesError):
        fit_compensation(iiwa, QuantSetup(Q6_10), samples=50)


def test_real_setup_needs_no_compensation(iiwa):
    params = fit_compensation(iiwa, QuantSetup(), samples=100)
    np.testing.assert_array_equal(params.offset, np.zeros((7, 7)))


def test_compensation_reduces_truncation_bias(iiwa):
    setup = QuantSetup(FxpFormat(12, 20), rounding=TRUNCATE)
    params = fit_compensation(iiwa, setup, samples=100, seed=0)
    assert params.fmt == "Q12.20"
    assert params.diagonal_only
    np.testing.assert_array_equal(params.offset, np.diag(np.diag(params.offset)))
    assert params.residual_after <= params.residual_before
    assert params.to_dict()["residuals"]["frobenius_after"] == params.residual_after


def test_compensation_halves_the_minv_error_at_the_arm_format(iiwa):
    params = fit_compensation(iiwa, QuantSetup(Q12_12), samples=100, seed=0)
    assert params.residual_after <= 0.5 * params.residual_before


def test_rollout_pairs_record_controllers_that_cannot_be_built(iiwa):
    lqr = ControllerConfig(kind="lqr")
    sim = short_sim(steps=5)
    target = default_target(iiwa, sim)
    starts = [initial_state(iiwa, target, sim, k) for k in range(2)]
    setup = QuantSetup(FxpFormat(12, 8), variant=ORIGINAL)
    outcomes = rollout_pairs(iiwa, lqr, setup, sim, starts, seed=4, workers=2)
    assert all(isinstance(o, RolloutFailure) for o in outcomes)
    assert [o.seed for o in outcomes] == [4, 5]
    assert outcomes[0].fmt == "Q12.8"
    assert "articulated inertia" in outcomes[0].error
    assert pair_metrics(outcomes) == (math.inf, math.inf)


def test_trajectory_pair_validation():
    run = Trajectory(np.zeros((3, 1)), np.zeros((3, 1)), np.zeros((3, 1)), np.zeros((3, 3)))
    short = Trajectory(np.zeros((2, 1)), np.zeros((2, 1)), np.zeros((2, 1)), np.zeros((2, 3)))
    moved = Trajectory(np.ones((3, 1)), np.zeros((3, 1)), np.zeros((3, 1)), np.zeros((3, 3)))
    with pytest.raises(ValueError):
        TrajectoryPair(run, short, 1e-3)
    with pytest.raises(ValueError):
        TrajectoryPair(run, moved, 1e-3)


def test_error_stats_checks_frobenius_field():
    with pytest.raises(ValueError):
        ErrorStats(
            velocity_error_by_joint=np.zeros(2),
            joint_depths=np.array([1, 2]),
            depth_correlation=0.0,
            minv_mae=np.array([[3.0, 0.0], [0.0, 4.0]]),
            minv_frobenius=7.0,
            minv_offdiag_mae=0.0,
            torque_error=np.zeros(1),
            trajectory_max=0.0,
            trajectory_rms=0.0,
            posture_max=0.0,
        )


def test_exports(pendulum, tmp_path):
    setup = QuantSetup(Q6_10)
    pair = rollout_pair(pendulum, PID, setup, short_sim(steps=10), seed=0)
    csv_path = export_trajectory_csv(pair, tmp_path / "out" / "trajectory.csv")
    frame = pd.read_csv(csv_path)
    assert list(frame.columns) == ["step", "t", "q0", "qd0", "tau0", "ee_x", "ee_y", "ee_z", "run_id"]
    assert len(frame) == 20
    assert set(frame["run_id"]) == {"real", "quantized"}

    stats = analyze_errors([pair], pendulum, setup, samples=10)
    json_path = export_error_stats(stats, tmp_path / "errors.json", extra={"format": "Q6.10"})
    payload = json.loads(json_path.read_text())
    assert payload["format"] == "Q6.10"
    assert list(payload) == sorted(payload)


def test_pair_metrics(pendulum):
    pairs = [rollout_pair(pendulum, PID, QuantSetup(Q6_10), short_sim(steps=20), seed=k) for k in range(3)]
    median, worst = pair_metrics(pairs)
    peaks = sorted(p.metrics()["trajectory"] for p in pairs)
    assert median == peaks[1]
    assert worst == peaks[2]
