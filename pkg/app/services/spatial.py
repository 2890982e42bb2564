"""Spatial-algebra operations shared by every RBD kernel."""

from typing import List, Tuple

import numpy as np

from app.exceptions import DimensionError
from app.models.robot import REVOLUTE, Joint, RobotModel
from app.models.spatial import SpatialTransform, axis_rotation, skew
from app.services.arithmetic import Arithmetic

MOTION = "motion"
FORCE = "force"


def crm(v: np.ndarray) -> np.ndarray:
    """Motion cross-product operator ``v×`` as a 6x6 matrix."""
    v = np.asarray(v)
    out = np.zeros((6, 6), dtype=v.dtype)
    w = _skew(v[:3])
    out[:3, :3] = w
    out[3:, 3:] = w
    out[3:, :3] = _skew(v[3:])
    return out


def crf(v: np.ndarray) -> np.ndarray:
    """Force cross-product operator ``v×*`` = -(v×)ᵀ."""
    return -crm(v).T


def _skew(v: np.ndarray) -> np.ndarray:
    # dtype-preserving so mantissa arrays stay exact
    z = v[0] * 0
    return np.array([[z, -v[2], v[1]], [v[2], z, -v[0]], [-v[1], v[0], z]], dtype=v.dtype)


def spatial_cross(v: np.ndarray, x: np.ndarray, kind: str = MOTION) -> np.ndarray:
    """``v × x`` for motion vectors, ``v ×* x`` for force vectors."""
    v = np.asarray(v, dtype=float)
    x = np.asarray(x, dtype=float)
    if v.shape != (6,) or x.shape != (6,):
        raise DimensionError("spatial vectors must have 6 components")
    if kind == MOTION:
        return crm(v) @ x
    if kind == FORCE:
        return crf(v) @ x
    raise ValueError(f"unknown cross-product kind {kind!r}")


def joint_motion_transform(joint: Joint, q: float) -> SpatialTransform:
    """Transform across the joint itself (joint frame to body frame)."""
    if joint.kind == REVOLUTE:
        return SpatialTransform(axis_rotation(joint.axis, q).T, np.zeros(3))
    return SpatialTransform(np.eye(3), joint.axis * q)


def joint_transform(model: RobotModel, i: int, q_i: float) -> SpatialTransform:
    """^iX_λ(i)(q_i): parent body frame to body ``i`` frame."""
    if not 0 <= i < model.n:
        raise IndexError(f"joint index {i} out of range for {model.n} joints")
    if not np.isfinite(q_i):
        raise ValueError("joint position must be finite")
    joint = model.joints[i]
    return joint_motion_transform(joint, q_i).compose(joint.tree_transform)


def joint_matrix(joint: Joint, q: float) -> np.ndarray:
    """6x6 motion transform of ``joint`` at ``q`` without validation overhead."""
    XJ = np.eye(6)
    if joint.kind == REVOLUTE:
        E = axis_rotation(joint.axis, q).T
        XJ[:3, :3] = E
        XJ[3:, 3:] = E
    else:
        XJ[3:, :3] = -skew(joint.axis * q)
    return XJ @ joint.tree_matrix


def joint_matrices(model: RobotModel, q: np.ndarray) -> List[np.ndarray]:
    return [joint_matrix(joint, float(qi)) for joint, qi in zip(model.joints, q)]


def forward_kinematics(model: RobotModel, q: np.ndarray) -> List[Tuple[np.ndarray, np.ndarray]]:
    """World (rotation, position) of every body frame."""
    poses: List[Tuple[np.ndarray, np.ndarray]] = []
    for i, joint in enumerate(model.joints):
        X = joint_transform(model, i, float(q[i]))
        if joint.parent < 0:
            R_p, p_p = np.eye(3), np.zeros(3)
        else:
            R_p, p_p = poses[joint.parent]
        poses.append((R_p @ X.rotation(), p_p + R_p @ X.r))
    return poses


def frame_position(model: RobotModel, q: np.ndarray, frame_name: str) -> np.ndarray:
    frame = model.frame(frame_name)
    return _frame_position(model, q, frame)


def end_effector_position(model: RobotModel, q: np.ndarray) -> np.ndarray:
    return _frame_position(model, q, model.end_effector_frame)


def _frame_position(model, q, frame) -> np.ndarray:
    if frame.body < 0:
        return frame.transform.r.copy()
    R, p = forward_kinematics(model, q)[frame.body]
    return p + R @ frame.transform.r


# Subspace helpers used inside the kernels. One-hot S_i makes every product
# with S_i a signed component selection, which costs no multiplications.


def expand(arith: Arithmetic, joint: Joint, value):
    """S_i * value as a 6-vector (or 6 x k block for a row ``value``)."""
    value_arr = np.asarray(value)
    shape = (6,) + value_arr.shape
    out = arith.zeros(shape)
    sel = joint.subspace_index
    if sel is None:
        S = arith.lift(joint.motion_subspace)
        return arith.mul(S.reshape((6,) + (1,) * value_arr.ndim), value_arr)
    k, sign = sel
    out[k] = value_arr if sign > 0 else arith.neg(value_arr)
    return out


def project(arith: Arithmetic, joint: Joint, f):
    """S_iᵀ f for a 6-vector or a 6 x k block."""
    sel = joint.subspace_index
    if sel is None:
        return arith.matmul(arith.lift(joint.motion_subspace), f)
    k, sign = sel
    return f[k] if sign > 0 else arith.neg(f[k])


def subspace_column(arith: Arithmetic, joint: Joint, M):
    """M S_i for a 6 x 6 block."""
    sel = joint.subspace_index
    if sel is None:
        return arith.matmul(M, arith.lift(joint.motion_subspace))
    k, sign = sel
    return M[:, k] if sign > 0 else arith.neg(M[:, k])


def _signed_select(arith: Arithmetic, pattern: np.ndarray, V):
    """pattern @ V for a 0/±1 pattern with at most one entry per row."""
    if np.any(np.count_nonzero(pattern, axis=1) > 1):
        return arith.matmul(arith.lift(pattern), V)
    out = arith.zeros(np.shape(V))
    for r in range(6):
        cols = np.flatnonzero(pattern[r])
        if len(cols):
            c = cols[0]
            out[r] = V[c] if pattern[r, c] > 0 else arith.neg(V[c])
    return out


def subspace_motion_cross(arith: Arithmetic, joint: Joint, V):
    """(S_i×) V."""
    return _signed_select(arith, crm(joint.motion_subspace), V)


def motion_cross_subspace(arith: Arithmetic, joint: Joint, V):
    """(V×) S_i, column-wise for a 6 x k block; equals -(S_i×) V."""
    return _signed_select(arith, -crm(joint.motion_subspace), V)


def subspace_force_cross(arith: Arithmetic, joint: Joint, F):
    """(S_i×*) F."""
    return _signed_select(arith, crf(joint.motion_subspace), F)


def cross_motion(arith: Arithmetic, v, x):
    """(v×) x with ``v`` held in the binding's representation."""
    return arith.matmul(crm(v), x)


def cross_force(arith: Arithmetic, v, x):
    """(v×*) x with ``v`` held in the binding's representation."""
    return arith.matmul(crf(v), x)
    arith.neg(v)  # saturation side effects only
    return v


def force_cross_operand(y) -> np.ndarray:
    """Matrix L(y) with (x×*) y = L(y) x, i.e. the force cross product as a
    linear map of its motion argument."""
    y = np.asarray(y)
    out = np.zeros((6, 6), dtype=y.dtype)
    n_sk = _skew(y[:3])
    f_sk = _skew(y[3:])
    out[:3, :3] = -n_sk
    out[:3, 3:] = -f_sk
    out[3:, :3] = -f_sk
    return out


def validate_state(model: RobotModel, *vectors: np.ndarray):
    for vec in vectors:
        if vec is not None and np.shape(vec) != (model.n,):
            raise DimensionError(
                f"expected vectors of length {model.n}, got shape {np.shape(vec)}"
            )

