import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np


@dataclass
class ControlOutput:
    """Torque command plus what the controller saw when it produced it."""

    tau: np.ndarray
    tracking_error: float = 0.0
    cost: Optional[float] = None
    info: Dict[str, float] = field(default_factory=dict)


@dataclass
class PidState:
    integral: np.ndarray

    @classmethod
    def zero(cls, n: int) -> "PidState":
        return cls(np.zeros(n))


@dataclass
class MpcPlan:
    """Warm-start record of the iLQR controller.

    ``xs`` has one more entry than ``us``; ``K`` holds the feedback gains used
    between re-solves.
    """

    xs: np.ndarray
    us: np.ndarray
    K: np.ndarray
    cost: float
    costs: List[float] = field(default_factory=list)
    age: int = 0


RUN_REAL = "real"
RUN_QUANTIZED = "quantized"


@dataclass
class RolloutFailure:
    """A rollout that could not run to completion; every metric is infinite."""

    seed: int
    fmt: Optional[str]
    error: str

    def metrics(self) -> Dict[str, float]:
        return {"trajectory": math.inf, "posture": math.inf, "torque": math.inf}


@dataclass
class Trajectory:
    q: np.ndarray
    qd: np.ndarray
    tau: np.ndarray
    ee: np.ndarray

    def __len__(self) -> int:
        return len(self.q)


@dataclass
class TrajectoryPair:
    """Real-controlled (A) and quantized-controlled (B) closed-loop runs."""

    real: Trajectory
    quantized: Trajectory
    dt: float
    seed: int = 0
    fmt: Optional[str] = None

    def __post_init__(self):
        if len(self.real) != len(self.quantized):
            raise ValueError("paired trajectories must have equal length")
        if not (
            np.array_equal(self.real.q[0], self.quantized.q[0])
            and np.array_equal(self.real.qd[0], self.quantized.qd[0])
        ):
            raise ValueError("paired trajectories must start from the same state")

    @property
    def steps(self) -> int:
        return len(self.real)

    @property
    def trajectory_error(self) -> np.ndarray:
        """End-effector distance between the runs at every step (m)."""
        return np.linalg.norm(self.real.ee - self.quantized.ee, axis=1)

    @property
    def posture_error(self) -> np.ndarray:
        """Joint-space distance between the runs at every step."""
        return np.linalg.norm(self.real.q - self.quantized.q, axis=1)

    @property
    def torque_error(self) -> np.ndarray:
        return np.linalg.norm(self.real.tau - self.quantized.tau, axis=1)

    def metrics(self) -> Dict[str, float]:
        """Peak value of every gating metric over the rollout."""
        return {
            "trajectory": float(np.max(self.trajectory_error)),
            "posture": float(np.max(self.posture_error)),
            "torque": float(np.max(self.torque_error)),
        }


@dataclass
class ErrorStats:
    velocity_error_by_joint: np.ndarray
    joint_depths: np.ndarray
    depth_correlation: float
    minv_mae: np.ndarray
    minv_frobenius: float
    minv_offdiag_mae: float
    torque_error: np.ndarray
    trajectory_max: float
    trajectory_rms: float
    posture_max: float
    samples: int = 0

    def __post_init__(self):
        recomputed = float(np.sqrt(np.sum(self.minv_mae**2)))
        if abs(recomputed - self.minv_frobenius) > 1e-12 * max(1.0, recomputed):
            raise ValueError("Frobenius field disagrees with the elementwise matrix")

    @property
    def velocity_error_by_depth(self) -> Dict[int, float]:
        out: Dict[int, float] = {}
        for depth in sorted(set(self.joint_depths.tolist())):
            out[int(depth)] = float(
                np.mean(self.velocity_error_by_joint[self.joint_depths == depth])
            )
        return out

    def to_dict(self) -> dict:
        return {
            "samples": self.samples,
            "velocity_error_by_joint": self.velocity_error_by_joint.tolist(),
            "joint_depths": self.joint_depths.tolist(),
            "velocity_error_by_depth": {
                str(k): v for k, v in self.velocity_error_by_depth.items()
            },
            "depth_correlation": self.depth_correlation,
            "minv_mae": self.minv_mae.tolist(),
            "minv_frobenius": self.minv_frobenius,
            "minv_offdiag_mae": self.minv_offdiag_mae,
            "torque_error": self.torque_error.tolist(),
            "trajectory_max": self.trajectory_max,
            "trajectory_rms": self.trajectory_rms,
            "posture_max": self.posture_max,
        }
