"""Iterative control and motion simulator.

Each closed-loop rollout is run twice from the same initial state: once with a
controller on real kernels (run A) and once with the same controller on
fixed-point kernels (run B). The plant is always integrated in double
precision, so only the controller path sees quantization.
"""

import dataclasses
import json
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.stats import spearmanr

from app.config import WORKERS
from app.exceptions import (
    DimensionError,
    InertiaError,
    InsufficientSamplesError,
    RiccatiConvergenceError,
    RolloutDivergenceError,
)
from app.models.dynamics import CompensationParams
from app.models.fixed_point import FxpFormat
from app.models.robot import JointState, RobotModel
from app.models.simulation import (
    RUN_QUANTIZED,
    RUN_REAL,
    ErrorStats,
    RolloutFailure,
    Trajectory,
    TrajectoryPair,
)
from app.schemas.run_config import ControllerConfig, SimConfig
from app.services.controllers import Controller, build_controller
from app.services.fixed_point import NEAREST
from app.services.rbd_kernels import DEFERRED, RbdBinding, batch_evaluate, bind
from app.services.spatial import end_effector_position, forward_kinematics
from app.utils.logging import get_logger

logger = get_logger(__name__)

MIN_COMPENSATION_SAMPLES = 100

# rollouts that end in one of these are recorded as failures, not raised
ROLLOUT_FAILURES = (RolloutDivergenceError, RiccatiConvergenceError, InertiaError)

RolloutOutcome = Union[TrajectoryPair, RolloutFailure]


class QuantSetup:
    """How the quantized controller path is built: format, modes and M⁻¹ offset."""

    def __init__(
        self,
        fmt: Optional[FxpFormat] = None,
        rounding: str = NEAREST,
        accumulate: str = "wide",
        variant: str = DEFERRED,
        compensation: Optional[CompensationParams] = None,
    ):
        self.fmt = fmt
        self.rounding = rounding
        self.accumulate = accumulate
        self.variant = variant
        self.compensation = compensation

    def binding(self, model: RobotModel, compensated: bool = True) -> RbdBinding:
        return bind(
            model,
            self.fmt,
            self.rounding,
            self.accumulate,
            self.variant,
            self.compensation if compensated else None,
        )

    def with_compensation(self, compensation: Optional[CompensationParams]) -> "QuantSetup":
        return QuantSetup(self.fmt, self.rounding, self.accumulate, self.variant, compensation)


# Plant


def step_plant(
    plant: Union[RobotModel, RbdBinding],
    state: JointState,
    tau: np.ndarray,
    dt: float,
    bound: Optional[float] = None,
) -> JointState:
    """One semi-implicit Euler step of the double-precision plant."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    if isinstance(plant, RobotModel):
        plant = RbdBinding(plant)
    if not plant.is_real:
        raise ValueError("the plant is always simulated with real kernels")
    qdd = plant.forward_dynamics(state.q, state.qd, tau)
    qd = state.qd + qdd * dt
    q = state.q + qd * dt
    if bound is not None:
        norm = float(np.linalg.norm(np.concatenate([q, qd])))
        if not np.isfinite(norm) or norm > bound:
            raise RolloutDivergenceError(0, norm)
    return JointState(q, qd, qdd)


def mechanical_energy(model: RobotModel, state: JointState) -> float:
    """Kinetic plus gravitational potential energy of the plant."""
    plant = RbdBinding(model)
    kinetic = 0.5 * state.qd @ plant.mass_matrix(state.q) @ state.qd
    potential = 0.0
    for joint, (R, p) in zip(model.joints, forward_kinematics(model, state.q)):
        potential -= joint.inertia.mass * model.gravity @ (p + R @ joint.inertia.com)
    return float(kinetic + potential)


# Sampling


def sample_states(model: RobotModel, count: int, seed: int) -> List[JointState]:
    """q uniform within joint limits, q̇ uniform within velocity limits."""
    rng = np.random.default_rng(seed)
    lower, upper = model.lower_limits, model.upper_limits
    vel = model.velocity_limits
    return [
        JointState(rng.uniform(lower, upper), rng.uniform(-vel, vel))
        for _ in range(count)
    ]


def load_dataset(path: Union[str, Path], model: RobotModel) -> List[JointState]:
    """Recorded states from a CSV of q columns followed by q̇ columns."""
    frame = pd.read_csv(path)
    n = model.n
    q_cols = [f"q{i}" for i in range(n)]
    qd_cols = [f"qd{i}" for i in range(n)]
    if set(q_cols + qd_cols) <= set(frame.columns):
        data = frame[q_cols + qd_cols].to_numpy(dtype=float)
    else:
        data = frame.select_dtypes("number").to_numpy(dtype=float)
    if data.ndim != 2 or data.shape[1] < 2 * n:
        raise DimensionError(f"dataset {path} needs {2 * n} state columns")
    return [JointState(row[:n], row[n : 2 * n]) for row in data]


def default_target(model: RobotModel, sim: SimConfig) -> JointState:
    if sim.target is not None:
        if len(sim.target) != model.n:
            raise DimensionError(f"target needs {model.n} entries")
        q = np.asarray(sim.target, dtype=float)
    else:
        q = 0.5 * (model.lower_limits + model.upper_limits)
    return JointState(q, np.zeros(model.n))


def initial_state(model: RobotModel, target: JointState, sim: SimConfig, seed: int) -> JointState:
    """Seeded perturbation of the regulation target."""
    rng = np.random.default_rng(seed)
    n = model.n
    q = target.q + rng.uniform(-sim.initial_offset, sim.initial_offset, n)
    q = np.clip(q, model.lower_limits, model.upper_limits)
    qd = rng.uniform(-sim.initial_velocity, sim.initial_velocity, n)
    return JointState(q, qd)


def initial_states(
    model: RobotModel, sim: SimConfig, count: int, seed: int
) -> List[JointState]:
    """Rollout starting points: recorded dataset rows or seeded perturbations."""
    if sim.dataset is not None:
        states = load_dataset(sim.dataset, model)
        rng = np.random.default_rng(seed)
        picks = rng.choice(len(states), size=count, replace=len(states) < count)
        return [states[i] for i in picks]
    target = default_target(model, sim)
    return [initial_state(model, target, sim, seed + k) for k in range(count)]


def joint_weights(model: RobotModel) -> np.ndarray:
    """Per-joint sensitivity weight: tree depth times inertia seen at the target."""
    q_mid = 0.5 * (model.lower_limits + model.upper_limits)
    inertia = np.diag(RbdBinding(model).mass_matrix(q_mid))
    inertia = inertia / max(float(np.max(inertia)), 1e-12)
    return (np.asarray(model.depths, dtype=float) + 1.0) * inertia


def heuristic_sample_order(samples: Sequence, model: RobotModel) -> List:
    """Stable reordering putting fast samples on heavy, deep joints first."""
    weights = joint_weights(model)
    keys = [-float(weights @ np.abs(s.qd)) for s in samples]
    order = sorted(range(len(samples)), key=lambda k: keys[k])
    return [samples[k] for k in order]


# Closed loop


def _simulate(
    model: RobotModel,
    controller: Controller,
    start: JointState,
    sim: SimConfig,
    run: str,
) -> Trajectory:
    plant = RbdBinding(model)
    n, steps = model.n, sim.steps
    q = np.zeros((steps, n))
    qd = np.zeros((steps, n))
    tau = np.zeros((steps, n))
    ee = np.zeros((steps, 3))
    state = start
    controller.reset()
    for k in range(steps):
        out = controller.control(state)
        q[k], qd[k], tau[k] = state.q, state.qd, out.tau
        ee[k] = end_effector_position(model, state.q)
        try:
            state = step_plant(plant, state, out.tau, sim.dt, sim.state_bound)
        except RolloutDivergenceError as exc:
            raise RolloutDivergenceError(k, exc.norm, run) from exc
    return Trajectory(q, qd, tau, ee)


def rollout_pair(
    model: RobotModel,
    controller_cfg: ControllerConfig,
    setup: QuantSetup,
    sim: SimConfig,
    seed: int = 0,
    start: Optional[JointState] = None,
) -> TrajectoryPair:
    """Run A with real kernels and run B with ``setup``'s kernels from one start."""
    target = default_target(model, sim)
    if start is None:
        start = initial_state(model, target, sim, seed)
    real = build_controller(controller_cfg, bind(model, variant=setup.variant), target, sim.dt)
    quant = build_controller(controller_cfg, setup.binding(model), target, sim.dt)
    run_a = _simulate(model, real, start, sim, RUN_REAL)
    run_b = _simulate(model, quant, start, sim, RUN_QUANTIZED)
    logger.debug(
        f"Rollout seed {seed} at {setup.fmt or 'real'}: "
        f"max trajectory error {np.max(np.linalg.norm(run_a.ee - run_b.ee, axis=1)):.3e} m"
    )
    return TrajectoryPair(run_a, run_b, sim.dt, seed, str(setup.fmt) if setup.fmt else None)


def rollout_pairs(
    model: RobotModel,
    controller_cfg: ControllerConfig,
    setup: QuantSetup,
    sim: SimConfig,
    starts: Sequence[JointState],
    seed: int = 0,
    workers: Optional[int] = None,
) -> List[RolloutOutcome]:
    """Independent rollouts on a thread pool, returned in ``starts`` order.

    A rollout that diverges, or whose controller cannot be built from the
    quantized kernels, comes back as a ``RolloutFailure``.
    """

    def run(args) -> RolloutOutcome:
        k, start = args
        try:
            return rollout_pair(model, controller_cfg, setup, sim, seed + k, start)
        except ROLLOUT_FAILURES as exc:
            fmt = str(setup.fmt) if setup.fmt else None
            logger.debug(f"Rollout {seed + k} at {fmt or 'real'} failed: {exc}")
            return RolloutFailure(seed + k, fmt, str(exc))

    with ThreadPoolExecutor(max_workers=workers or WORKERS) as executor:
        return list(executor.map(run, enumerate(starts)))


# Quantization error analyzer


def _minv_errors(
    model: RobotModel, setup: QuantSetup, states: Sequence[JointState], compensated: bool = True
) -> np.ndarray:
    real = batch_evaluate(bind(model, variant=setup.variant), "Minv", states)
    quant = batch_evaluate(setup.binding(model, compensated), "Minv", states)
    return np.array([r - m for r, m in zip(real, quant)])


def _offdiag_mae(errors: np.ndarray) -> float:
    n = errors.shape[-1]
    if n < 2:
        return 0.0
    mask = ~np.eye(n, dtype=bool)
    return float(np.mean(np.abs(errors)[..., mask]))


def _mean_frobenius(errors: np.ndarray) -> float:
    return float(np.mean(np.linalg.norm(errors, axis=(1, 2))))


def velocity_errors(
    model: RobotModel, setup: QuantSetup, states: Sequence[JointState]
) -> np.ndarray:
    """Mean |δv_i| (spatial velocity error norm) per joint over ``states``."""
    real, quant = bind(model, variant=setup.variant), setup.binding(model)
    total = np.zeros(model.n)
    for s in states:
        delta = real.link_velocities(s.q, s.qd) - quant.link_velocities(s.q, s.qd)
        total += np.linalg.norm(delta, axis=1)
    return total / max(len(states), 1)


def depth_correlation(model: RobotModel, errors: np.ndarray) -> float:
    depths = np.asarray(model.depths)
    if np.ptp(errors) == 0 or np.ptp(depths) == 0:
        return 0.0
    rho = spearmanr(depths, errors).correlation
    return 0.0 if np.isnan(rho) else float(rho)


def analyze_errors(
    pairs: Sequence[TrajectoryPair],
    model: RobotModel,
    setup: QuantSetup,
    samples: int = 200,
    seed: int = 0,
) -> ErrorStats:
    """Closed-loop error summary plus kernel-level errors over sampled states."""
    if not pairs:
        raise ValueError("analyze_errors needs at least one trajectory pair")
    states = sample_states(model, samples, seed)
    vel = velocity_errors(model, setup, states)
    minv_err = _minv_errors(model, setup, states)
    mae = np.mean(np.abs(minv_err), axis=0)

    trajectory = np.concatenate([p.trajectory_error for p in pairs])
    steps = min(p.steps for p in pairs)
    torque = np.mean([p.torque_error[:steps] for p in pairs], axis=0)
    stats = ErrorStats(
        velocity_error_by_joint=vel,
        joint_depths=np.asarray(model.depths),
        depth_correlation=depth_correlation(model, vel),
        minv_mae=mae,
        minv_frobenius=float(np.sqrt(np.sum(mae**2))),
        minv_offdiag_mae=_offdiag_mae(mae),
        torque_error=torque,
        trajectory_max=float(np.max(trajectory)),
        trajectory_rms=float(np.sqrt(np.mean(trajectory**2))),
        posture_max=float(max(np.max(p.posture_error) for p in pairs)),
        samples=samples,
    )
    logger.info(
        f"Error analysis at {setup.fmt or 'real'}: trajectory max {stats.trajectory_max:.3e} m, "
        f"M⁻¹ Frobenius {stats.minv_frobenius:.3e}, depth correlation {stats.depth_correlation:.2f}"
    )
    return stats


def fit_compensation(
    model: RobotModel,
    setup: QuantSetup,
    samples: int = MIN_COMPENSATION_SAMPLES,
    seed: int = 0,
    diagonal_only: bool = True,
) -> CompensationParams:
    """Mean M⁻¹ quantization offset, validated on a held-out sample set (seed + 1)."""
    if samples < MIN_COMPENSATION_SAMPLES:
        raise InsufficientSamplesError(
            f"compensation needs at least {MIN_COMPENSATION_SAMPLES} samples, got {samples}"
        )
    n = model.n
    if setup.fmt is None:
        return CompensationParams(np.zeros((n, n)), samples, None)

    uncompensated = setup.with_compensation(None)
    mean = np.mean(_minv_errors(model, uncompensated, sample_states(model, samples, seed)), axis=0)
    offset = np.diag(np.diag(mean)) if diagonal_only else 0.5 * (mean + mean.T)
    candidate = CompensationParams(offset, samples, str(setup.fmt), diagonal_only=diagonal_only)

    held_out = sample_states(model, samples, seed + 1)
    before = _minv_errors(model, uncompensated, held_out)
    after = _minv_errors(model, uncompensated.with_compensation(candidate), held_out)
    params = dataclasses.replace(
        candidate,
        residual_before=_mean_frobenius(before),
        residual_after=_mean_frobenius(after),
        offdiag_before=_offdiag_mae(before),
        offdiag_after=_offdiag_mae(after),
    )
    logger.info(
        f"Compensation at {setup.fmt}: held-out Frobenius error "
        f"{params.residual_before:.4e} -> {params.residual_after:.4e}"
    )
    if params.offdiag_after > params.offdiag_before:
        logger.info(
            f"Off-diagonal M⁻¹ error grew {params.offdiag_before:.4e} -> {params.offdiag_after:.4e}"
        )
    return params


# Export


def trajectory_frame(pair: TrajectoryPair) -> pd.DataFrame:
    frames = []
    for run_id, run in ((RUN_REAL, pair.real), (RUN_QUANTIZED, pair.quantized)):
        n = run.q.shape[1]
        data = {"step": np.arange(len(run)), "t": np.arange(len(run)) * pair.dt}
        for name, block in (("q", run.q), ("qd", run.qd), ("tau", run.tau)):
            for i in range(n):
                data[f"{name}{i}"] = block[:, i]
        for axis, column in zip("xyz", run.ee.T):
            data[f"ee_{axis}"] = column
        data["run_id"] = run_id
        frames.append(pd.DataFrame(data))
    return pd.concat(frames, ignore_index=True)


def export_trajectory_csv(pair: TrajectoryPair, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    trajectory_frame(pair).to_csv(path, index=False, float_format="%.12g", lineterminator="\n")
    return path


def export_error_stats(stats: ErrorStats, path: Union[str, Path], extra: Optional[dict] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = stats.to_dict()
    if extra:
        payload.update(extra)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def pair_metrics(pairs: Sequence[RolloutOutcome]) -> Tuple[float, float]:
    """Median and max of the per-rollout peak trajectory error; failures count as inf."""
    peaks = np.array([p.metrics()["trajectory"] for p in pairs])
    return float(np.median(peaks)), float(np.max(peaks))
