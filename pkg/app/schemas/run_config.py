from pathlib import Path
from typing import Dict, List, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from app.models.fixed_point import FxpFormat

Gain = Union[float, List[float]]

METRICS = ("trajectory", "posture", "torque")


def _per_joint(value: Gain, n: int, name: str) -> np.ndarray:
    arr = np.full(n, float(value)) if np.isscalar(value) else np.asarray(value, dtype=float)
    if arr.shape != (n,):
        raise ValueError(f"{name} must be a scalar or a list of {n} values")
    return arr


def _finite(value: Gain) -> Gain:
    values = [value] if np.isscalar(value) else value
    if not np.all(np.isfinite(values)):
        raise ValueError("gains must be finite")
    return value


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class PidConfig(_Strict):
    """Computed-torque PID gains; defaults are mild on purpose"""

    kp: Gain = Field(100.0, description="Proportional gain (scalar or per joint)")
    ki: Gain = Field(10.0, description="Integral gain (scalar or per joint)")
    kd: Gain = Field(20.0, description="Derivative gain (scalar or per joint)")
    integral_clamp: float = Field(0.5, gt=0, description="Bound on |∫e| per joint (rad·s)")
    dt: float = Field(1e-3, gt=0, description="Control period (s)")

    _check_gains = field_validator("kp", "ki", "kd")(_finite)

    def gains(self, n: int):
        return (
            _per_joint(self.kp, n, "kp"),
            _per_joint(self.ki, n, "ki"),
            _per_joint(self.kd, n, "kd"),
        )


class LqrConfig(_Strict):
    """Infinite-horizon discrete LQR about a fixed operating point"""

    q_position: Gain = Field(100.0, description="Diagonal state cost on joint positions")
    q_velocity: Gain = Field(1.0, description="Diagonal state cost on joint velocities")
    r: Gain = Field(0.01, description="Diagonal input cost")
    Q: Optional[List[List[float]]] = Field(None, description="Full 2N x 2N state cost")
    R: Optional[List[List[float]]] = Field(None, description="Full N x N input cost")
    operating_point: Optional[List[float]] = Field(
        None, description="Linearization posture; defaults to the reference posture"
    )
    dt: float = Field(0.01, gt=0, description="Euler discretization step (s)")
    max_iterations: int = Field(5000, ge=1, description="Riccati iteration cap")
    tolerance: float = Field(1e-9, gt=0, description="Riccati fixed-point tolerance")

    _check_gains = field_validator("q_position", "q_velocity", "r")(_finite)

    def cost_matrices(self, n: int):
        if self.Q is not None:
            Q = np.asarray(self.Q, dtype=float)
        else:
            Q = np.diag(
                np.concatenate(
                    [
                        _per_joint(self.q_position, n, "q_position"),
                        _per_joint(self.q_velocity, n, "q_velocity"),
                    ]
                )
            )
        R = (
            np.asarray(self.R, dtype=float)
            if self.R is not None
            else np.diag(_per_joint(self.r, n, "r"))
        )
        if Q.shape != (2 * n, 2 * n) or R.shape != (n, n):
            raise ValueError(f"Q must be {2 * n}x{2 * n} and R {n}x{n}")
        if not np.allclose(Q, Q.T) or np.linalg.eigvalsh(Q).min() < -1e-12:
            raise ValueError("Q must be symmetric positive semidefinite")
        if not np.allclose(R, R.T) or np.linalg.eigvalsh(R).min() <= 0.0:
            raise ValueError("R must be symmetric positive definite")
        return Q, R


class MpcConfig(_Strict):
    """Iterative-LQR shooting MPC"""

    horizon: int = Field(20, ge=1, description="Prediction horizon (steps)")
    dt: float = Field(0.01, gt=0, description="Prediction step (s)")
    q_position: Gain = Field(100.0, description="Stage cost on position error")
    q_velocity: Gain = Field(1.0, description="Stage cost on velocity error")
    r: Gain = Field(1e-3, description="Stage cost on torque deviation from feedforward")
    terminal_weight: float = Field(10.0, gt=0, description="Terminal cost multiplier")
    iterations: int = Field(10, ge=1, description="iLQR iterations per solve")
    regularization: float = Field(1e-6, gt=0, description="Floor of the Quu regularizer")
    line_search_steps: int = Field(8, ge=1, description="Step halvings tried per iteration")
    replan_interval: int = Field(10, ge=1, description="Plant steps between re-solves")
    divergence_bound: float = Field(1e6, gt=0, description="Rollout state-norm bound")

    _check_gains = field_validator("q_position", "q_velocity", "r")(_finite)

    def cost_matrices(self, n: int):
        Q = np.diag(
            np.concatenate(
                [
                    _per_joint(self.q_position, n, "q_position"),
                    _per_joint(self.q_velocity, n, "q_velocity"),
                ]
            )
        )
        R = np.diag(_per_joint(self.r, n, "r"))
        return Q, R, self.terminal_weight * Q


class ControllerConfig(_Strict):
    kind: Literal["pid", "lqr", "mpc"] = Field("pid", description="Controller template")
    pid: PidConfig = Field(default_factory=PidConfig)
    lqr: LqrConfig = Field(default_factory=LqrConfig)
    mpc: MpcConfig = Field(default_factory=MpcConfig)


class SimConfig(_Strict):
    """Closed-loop simulation and error-metric settings"""

    dt: float = Field(1e-3, gt=0, description="Plant integration step (s)")
    steps: int = Field(2000, ge=1, description="Steps per rollout")
    target: Optional[List[float]] = Field(
        None, description="Regulation target posture; defaults to the middle of the joint range"
    )
    initial_offset: float = Field(
        0.1, ge=0, description="Half-width of the seeded initial offset from the target (rad or m)"
    )
    initial_velocity: float = Field(
        0.5, ge=0, description="Half-width of the seeded initial joint velocity (rad/s or m/s)"
    )
    dataset: Optional[str] = Field(
        None, description="CSV of recorded states (q..., qd...) used instead of random sampling"
    )
    metrics: List[str] = Field(["trajectory"], description="Metrics that gate a candidate")
    weights: Optional[Dict[str, float]] = Field(
        None, description="Metric weights; enables the weighted pass criterion"
    )
    tolerance: float = Field(5e-4, gt=0, description="End-effector trajectory tolerance (m)")
    state_bound: float = Field(1e4, gt=0, description="Plant state-norm blow-up bound")

    @field_validator("metrics")
    @classmethod
    def _known_metrics(cls, value: List[str]) -> List[str]:
        unknown = sorted(set(value) - set(METRICS))
        if unknown:
            raise ValueError(f"unknown metrics {unknown}; choose from {list(METRICS)}")
        if not value:
            raise ValueError("at least one metric must be selected")
        return value

    @field_validator("weights")
    @classmethod
    def _known_weights(cls, value):
        if value is None:
            return value
        unknown = sorted(set(value) - set(METRICS))
        if unknown:
            raise ValueError(f"weights for unknown metrics {unknown}")
        if any(w < 0 for w in value.values()) or sum(value.values()) <= 0:
            raise ValueError("weights must be non-negative with a positive sum")
        return value


class SearchConstraints(_Strict):
    """Candidate space and precision requirements of the format search"""

    mode: Literal["dsp48", "dsp58", "unconstrained"] = Field(
        "dsp58", description="Target hardware mode"
    )
    widths: Optional[List[int]] = Field(
        None, description="Allowed total widths; defaults per hardware mode"
    )
    tolerances: Dict[str, float] = Field(
        default_factory=lambda: {"trajectory": 5e-4},
        description="Per-metric tolerance (trajectory in m, posture in rad, torque in N·m)",
    )
    range_overrides: Dict[str, float] = Field(
        default_factory=dict, description="Peak |value| overrides per tracked variable"
    )
    range_samples: int = Field(200, ge=100, description="States used by range analysis")
    rollouts_per_candidate: int = Field(200, ge=1, description="ICMS rollouts per candidate")
    max_rollouts: Optional[int] = Field(None, ge=1, description="Total rollout budget")
    min_frac: int = Field(4, ge=0, description="Smallest n_frac enumerated")
    n_int_max: int = Field(20, ge=1, description="Largest n_int (unconstrained mode)")
    n_frac_max: int = Field(24, ge=0, description="Largest n_frac (unconstrained mode)")
    prune_factor: float = Field(1.2, ge=1, description="Early-termination threshold multiplier")
    prune_fraction: float = Field(0.1, gt=0, le=1, description="Leading fraction checked for pruning")
    audit_fraction: float = Field(0.1, ge=0, le=1, description="Share of pruned candidates audited")
    compensation_samples: int = Field(100, ge=100, description="Samples for compensation fitting")
    full_compensation: bool = Field(False, description="Fit the full offset matrix, not only the diagonal")

    @field_validator("widths")
    @classmethod
    def _sorted_widths(cls, value):
        if value is not None:
            if not value or any(w < 2 or w > 64 for w in value):
                raise ValueError("widths must be between 2 and 64 bits")
            if value != sorted(value):
                raise ValueError("widths must be sorted ascending")
        return value

    @field_validator("tolerances")
    @classmethod
    def _positive_tolerances(cls, value):
        for name, tol in value.items():
            if name not in METRICS:
                raise ValueError(f"tolerance for unknown metric {name!r}")
            if not tol > 0:
                raise ValueError(f"tolerance for {name} must be positive")
        return value


class HwConfig(_Strict):
    """Analytical accelerator model parameters"""

    family: Literal["dsp48", "dsp58"] = Field("dsp58", description="DSP primitive family")
    cost_table: Optional[Dict[str, Dict[int, int]]] = Field(
        None, description="Per-family map of operand width to DSPs per MAC"
    )
    budget: int = Field(5073, ge=0, description="Total DSP budget")
    clock_hz: float = Field(228e6, gt=0, description="Accelerator clock (Hz)")
    stage_depth: int = Field(4, ge=0, description="Fixed pipeline depth per unit (cycles)")
    divider_depth: int = Field(20, ge=1, description="Divider pipeline depth (cycles)")
    fifo_depth: int = Field(2, ge=0, description="Inter-pass FIFO depth (cycles)")
    lanes: int = Field(1024, ge=1, description="Parallel MAC lanes of a fully provisioned unit")
    minv_variant: Literal["original", "deferred"] = Field("deferred", description="M⁻¹ recursion")
    horizons: List[int] = Field(
        default_factory=lambda: [1, 2, 4, 8, 16, 32, 64], description="Horizons for the control-rate sweep"
    )
    iterations: int = Field(10, ge=1, description="MPC iterations assumed by the control-rate model")
    budgets: Optional[List[int]] = Field(None, description="Extra budgets for the budget sweep")


class RunConfig(_Strict):
    """One run of the lab, loaded from a TOML file"""

    robot: str = Field(..., description="Bundled robot name or URDF path (relative to the config)")
    end_effector: Optional[str] = Field(None, description="Frame used for trajectory error")
    seed: int = Field(0, ge=0, description="Master seed")
    output_dir: Optional[str] = Field(None, description="Directory for data artifacts")
    fixed_format: Optional[str] = Field(None, description="Fixed format 'Qi.f'")
    search: Optional[SearchConstraints] = Field(None, description="Format search constraints")
    rounding: Literal["nearest", "truncate"] = Field("nearest", description="Product rounding")
    accumulate: Literal["wide", "per_op"] = Field("wide", description="Dot-product accumulation")
    minv_variant: Literal["original", "deferred"] = Field("deferred", description="Kernel M⁻¹")
    compensation: Optional[str] = Field(None, description="compensation.json applied to M⁻¹")
    controller: ControllerConfig = Field(default_factory=ControllerConfig)
    sim: SimConfig = Field(default_factory=SimConfig)
    hw: HwConfig = Field(default_factory=HwConfig)

    # set by the loader, not by users
    base_dir: Optional[Path] = Field(None, exclude=True)

    @field_validator("fixed_format")
    @classmethod
    def _parse_format(cls, value):
        if value is not None:
            FxpFormat.parse(value)
        return value

    @model_validator(mode="after")
    def _one_precision_source(self):
        if (self.fixed_format is None) == (self.search is None):
            raise ValueError("exactly one of fixed_format and search must be given")
        return self

    @property
    def format(self) -> Optional[FxpFormat]:
        return FxpFormat.parse(self.fixed_format) if self.fixed_format else None
