"""Spatial (6D) value types in Plücker coordinates.

Motion and force vectors are ordered angular part first, linear part second.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

ORTHONORMAL_TOL = 1e-9
SYMMETRY_TOL = 1e-12


def skew(v: np.ndarray) -> np.ndarray:
    """3x3 cross-product matrix of ``v``."""
    return np.array(
        [
            [0.0, -v[2], v[1]],
            [v[2], 0.0, -v[0]],
            [-v[1], v[0], 0.0],
        ]
    )


def unskew(m: np.ndarray) -> np.ndarray:
    return np.array([m[2, 1], m[0, 2], m[1, 0]])


def clean(a: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Zero entries below ``tol`` so structural zeros stay exact."""
    out = np.array(a, dtype=float)
    out[np.abs(out) < tol] = 0.0
    return out


def rpy_to_rotation(rpy) -> np.ndarray:
    """URDF fixed-axis roll/pitch/yaw to a rotation matrix (Rz @ Ry @ Rx)."""
    roll, pitch, yaw = rpy
    cr, sr = np.cos(roll), np.sin(roll)
    cp, sp = np.cos(pitch), np.sin(pitch)
    cy, sy = np.cos(yaw), np.sin(yaw)
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cr, -sr], [0.0, sr, cr]])
    ry = np.array([[cp, 0.0, sp], [0.0, 1.0, 0.0], [-sp, 0.0, cp]])
    rz = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
    # snap printed-angle round-off (e.g. 1.5707963268) to exact axis alignment
    return clean(rz @ ry @ rx, 1e-10)


def rotation_to_rpy(rot: np.ndarray) -> np.ndarray:
    pitch = np.arctan2(-rot[2, 0], np.hypot(rot[0, 0], rot[1, 0]))
    if np.isclose(np.cos(pitch), 0.0, atol=1e-12):
        # gimbal lock: fold yaw into roll
        roll = np.arctan2(-rot[1, 2], rot[1, 1])
        yaw = 0.0
    else:
        roll = np.arctan2(rot[2, 1], rot[2, 2])
        yaw = np.arctan2(rot[1, 0], rot[0, 0])
    return np.array([roll, pitch, yaw])


def axis_rotation(axis: np.ndarray, angle: float) -> np.ndarray:
    """Rodrigues rotation about a unit ``axis``."""
    k = skew(axis)
    return np.eye(3) + np.sin(angle) * k + (1.0 - np.cos(angle)) * (k @ k)


@dataclass(frozen=True, eq=False)
class SpatialTransform:
    """Plücker transform from frame A to frame B.

    ``E`` rotates A coordinates into B coordinates and ``r`` is the position of
    B's origin expressed in A. The 6x6 motion transform is
    ``[[E, 0], [-E r×, E]]``.
    """

    E: np.ndarray
    r: np.ndarray

    def __post_init__(self):
        E = np.asarray(self.E, dtype=float).reshape(3, 3)
        r = np.asarray(self.r, dtype=float).reshape(3)
        if not np.allclose(E.T @ E, np.eye(3), atol=ORTHONORMAL_TOL):
            raise ValueError("rotation block is not orthonormal")
        if np.linalg.det(E) < 0.0:
            raise ValueError("rotation block has determinant -1")
        E.setflags(write=False)
        r.setflags(write=False)
        object.__setattr__(self, "E", E)
        object.__setattr__(self, "r", r)

    @classmethod
    def identity(cls) -> "SpatialTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_origin(cls, xyz, rpy) -> "SpatialTransform":
        """Transform into a child frame placed at ``xyz``/``rpy`` in its parent."""
        rot = rpy_to_rotation(rpy)
        return cls(rot.T, np.asarray(xyz, dtype=float))

    def matrix(self) -> np.ndarray:
        """6x6 motion transform."""
        X = np.zeros((6, 6))
        X[:3, :3] = self.E
        X[3:, 3:] = self.E
        X[3:, :3] = -self.E @ skew(self.r)
        return clean(X, 1e-15)

    def force_matrix(self) -> np.ndarray:
        """6x6 force transform (inverse transpose of the motion transform)."""
        X = np.zeros((6, 6))
        X[:3, :3] = self.E
        X[3:, 3:] = self.E
        X[:3, 3:] = -self.E @ skew(self.r)
        return clean(X, 1e-15)

    def compose(self, inner: "SpatialTransform") -> "SpatialTransform":
        """``self ∘ inner``: apply ``inner`` first (A→B), then ``self`` (B→C)."""
        return SpatialTransform(self.E @ inner.E, inner.r + inner.E.T @ self.r)

    def inverse(self) -> "SpatialTransform":
        return SpatialTransform(self.E.T, -self.E @ self.r)

    def rotation(self) -> np.ndarray:
        """Orientation of frame B expressed in frame A."""
        return self.E.T

    def is_identity(self, tol: float = 1e-9) -> bool:
        return bool(
            np.allclose(self.E, np.eye(3), atol=tol)
            and np.allclose(self.r, 0.0, atol=tol)
        )


@dataclass(frozen=True, eq=False)
class SpatialInertia:
    """Rigid-body spatial inertia about a link frame's origin."""

    matrix: np.ndarray = field(repr=False)

    def __post_init__(self):
        mat = np.asarray(self.matrix, dtype=float).reshape(6, 6)
        if not np.allclose(mat, mat.T, atol=SYMMETRY_TOL * max(1.0, np.abs(mat).max())):
            raise ValueError("spatial inertia is not symmetric")
        mat = 0.5 * (mat + mat.T)
        mat.setflags(write=False)
        object.__setattr__(self, "matrix", mat)

    @classmethod
    def from_mass_com_inertia(
        cls, mass: float, com, inertia_at_com: Optional[np.ndarray] = None
    ) -> "SpatialInertia":
        com = np.asarray(com, dtype=float)
        ic = np.zeros((3, 3)) if inertia_at_com is None else np.asarray(inertia_at_com)
        cx = skew(com)
        mat = np.zeros((6, 6))
        mat[:3, :3] = ic + mass * cx @ cx.T
        mat[:3, 3:] = mass * cx
        mat[3:, :3] = mass * cx.T
        mat[3:, 3:] = mass * np.eye(3)
        return cls(clean(mat, 1e-15))

    @classmethod
    def zero(cls) -> "SpatialInertia":
        return cls(np.zeros((6, 6)))

    @property
    def mass(self) -> float:
        return float(self.matrix[5, 5])

    @property
    def com(self) -> np.ndarray:
        if self.mass <= 0.0:
            return np.zeros(3)
        return unskew(self.matrix[:3, 3:]) / self.mass

    @property
    def inertia_at_com(self) -> np.ndarray:
        cx = skew(self.com)
        return self.matrix[:3, :3] - self.mass * cx @ cx.T

    def transformed(self, X: SpatialTransform) -> "SpatialInertia":
        """Re-express an inertia given in frame B in frame A, for ``X`` mapping A→B."""
        Xm = X.matrix()
        return SpatialInertia(clean(Xm.T @ self.matrix @ Xm, 1e-15))

    def __add__(self, other: "SpatialInertia") -> "SpatialInertia":
        return SpatialInertia(self.matrix + other.matrix)

    def is_physical(self) -> bool:
        """Positive mass and a positive semidefinite rotational block."""
        if self.mass <= 0.0:
            return False
        eig = np.linalg.eigvalsh(self.inertia_at_com)
        return bool(eig.min() >= -1e-12 * max(1.0, abs(eig).max()))
