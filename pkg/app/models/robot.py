from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, List, Optional, Tuple

import numpy as np

from app.models.spatial import SpatialInertia, SpatialTransform

REVOLUTE = "revolute"
PRISMATIC = "prismatic"

DEFAULT_POSITION_LIMIT = np.pi
DEFAULT_VELOCITY_LIMIT = 2.0
BASE = -1


@dataclass(frozen=True, eq=False)
class Joint:
    """A one-DOF joint and the body it carries.

    ``parent`` is the index of the parent body, ``BASE`` (-1) for the fixed base.
    ``tree_transform`` maps the parent body frame to the joint frame at q = 0.
    """

    name: str
    link: str
    kind: str
    axis: np.ndarray
    parent: int
    tree_transform: SpatialTransform
    inertia: SpatialInertia
    lower: float = -DEFAULT_POSITION_LIMIT
    upper: float = DEFAULT_POSITION_LIMIT
    velocity_limit: float = DEFAULT_VELOCITY_LIMIT
    effort_limit: Optional[float] = None

    def __post_init__(self):
        axis = np.asarray(self.axis, dtype=float).reshape(3)
        axis.setflags(write=False)
        object.__setattr__(self, "axis", axis)

    @cached_property
    def motion_subspace(self) -> np.ndarray:
        """S_i as a 6-vector."""
        s = np.zeros(6)
        if self.kind == REVOLUTE:
            s[:3] = self.axis
        else:
            s[3:] = self.axis
        return s

    @cached_property
    def tree_matrix(self) -> np.ndarray:
        return self.tree_transform.matrix()

    @cached_property
    def subspace_index(self) -> Optional[Tuple[int, float]]:
        """(component, sign) when S_i is a signed one-hot vector, else None."""
        nz = np.flatnonzero(self.motion_subspace)
        if len(nz) != 1:
            return None
        k = int(nz[0])
        return k, float(np.sign(self.motion_subspace[k]))


@dataclass(frozen=True, eq=False)
class Frame:
    """A massless frame rigidly attached to a body (or to the base)."""

    name: str
    body: int
    transform: SpatialTransform


@dataclass(frozen=True, eq=False)
class RobotModel:
    """Fixed-base kinematic tree with bodies numbered parent-before-child."""

    name: str
    base_link: str
    joints: Tuple[Joint, ...]
    gravity: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, -9.81]))
    frames: Tuple[Frame, ...] = ()
    end_effector: Optional[str] = None

    def __post_init__(self):
        gravity = np.asarray(self.gravity, dtype=float).reshape(3)
        gravity.setflags(write=False)
        object.__setattr__(self, "gravity", gravity)
        object.__setattr__(self, "joints", tuple(self.joints))
        object.__setattr__(self, "frames", tuple(self.frames))
        for i, joint in enumerate(self.joints):
            if not joint.parent < i:
                raise ValueError(f"joint {joint.name} is not ordered after its parent")

    @property
    def n(self) -> int:
        """N_B, the number of bodies (and joints)."""
        return len(self.joints)

    @cached_property
    def parents(self) -> Tuple[int, ...]:
        return tuple(j.parent for j in self.joints)

    @cached_property
    def children(self) -> Tuple[Tuple[int, ...], ...]:
        kids: List[List[int]] = [[] for _ in self.joints]
        for i, p in enumerate(self.parents):
            if p != BASE:
                kids[p].append(i)
        return tuple(tuple(k) for k in kids)

    @cached_property
    def depths(self) -> Tuple[int, ...]:
        """Joint depth: 1 for joints attached to the base."""
        depth: List[int] = []
        for p in self.parents:
            depth.append(1 if p == BASE else depth[p] + 1)
        return tuple(depth)

    def subtree(self, i: int) -> Tuple[int, ...]:
        """``i`` and all of its descendants, in index order."""
        return self._subtrees[i]

    @cached_property
    def _subtrees(self) -> Tuple[Tuple[int, ...], ...]:
        members: List[set] = [{i} for i in range(self.n)]
        for i in reversed(range(self.n)):
            p = self.parents[i]
            if p != BASE:
                members[p] |= members[i]
        return tuple(tuple(sorted(m)) for m in members)

    def ancestors(self, i: int) -> Tuple[int, ...]:
        """``i`` and its ancestors, root first."""
        chain = []
        while i != BASE:
            chain.append(i)
            i = self.parents[i]
        return tuple(reversed(chain))

    @cached_property
    def leaves(self) -> Tuple[int, ...]:
        return tuple(i for i in range(self.n) if not self.children[i])

    @property
    def joint_names(self) -> List[str]:
        return [j.name for j in self.joints]

    @property
    def lower_limits(self) -> np.ndarray:
        return np.array([j.lower for j in self.joints])

    @property
    def upper_limits(self) -> np.ndarray:
        return np.array([j.upper for j in self.joints])

    @property
    def velocity_limits(self) -> np.ndarray:
        return np.array([j.velocity_limit for j in self.joints])

    @property
    def effort_limits(self) -> Optional[np.ndarray]:
        if all(j.effort_limit is None for j in self.joints):
            return None
        return np.array(
            [np.inf if j.effort_limit is None else j.effort_limit for j in self.joints]
        )

    def frame(self, name: str) -> Frame:
        for f in self.frames:
            if f.name == name:
                return f
        for i, joint in enumerate(self.joints):
            if joint.link == name:
                return Frame(name, i, SpatialTransform.identity())
        raise KeyError(name)

    @property
    def end_effector_frame(self) -> Frame:
        """Configured end-effector, else the last frame on the deepest leaf."""
        if self.end_effector is not None:
            return self.frame(self.end_effector)
        leaf = max(self.leaves, key=lambda i: (self.depths[i], i))
        attached = [f for f in self.frames if f.body == leaf]
        if attached:
            return attached[-1]
        return Frame(self.joints[leaf].link, leaf, SpatialTransform.identity())

    def with_velocity_limits(self, scale: float) -> "RobotModel":
        """Copy of the model with every velocity limit multiplied by ``scale``."""
        joints = [
            Joint(
                name=j.name,
                link=j.link,
                kind=j.kind,
                axis=j.axis,
                parent=j.parent,
                tree_transform=j.tree_transform,
                inertia=j.inertia,
                lower=j.lower,
                upper=j.upper,
                velocity_limit=j.velocity_limit * scale,
                effort_limit=j.effort_limit,
            )
            for j in self.joints
        ]
        return RobotModel(
            name=self.name,
            base_link=self.base_link,
            joints=tuple(joints),
            gravity=self.gravity,
            frames=self.frames,
            end_effector=self.end_effector,
        )

    def without_gravity(self) -> "RobotModel":
        return RobotModel(
            name=self.name,
            base_link=self.base_link,
            joints=self.joints,
            gravity=np.zeros(3),
            frames=self.frames,
            end_effector=self.end_effector,
        )


@dataclass(frozen=True, eq=False)
class JointState:
    """q, q̇ and q̈ for every joint."""

    q: np.ndarray
    qd: np.ndarray
    qdd: Optional[np.ndarray] = None

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float).reshape(-1)
        qd = np.asarray(self.qd, dtype=float).reshape(-1)
        qdd = (
            np.zeros_like(q)
            if self.qdd is None
            else np.asarray(self.qdd, dtype=float).reshape(-1)
        )
        if not (len(q) == len(qd) == len(qdd)):
            raise ValueError("q, qd and qdd must have equal length")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "qd", qd)
        object.__setattr__(self, "qdd", qdd)

    @property
    def n(self) -> int:
        return len(self.q)

    def as_vector(self) -> np.ndarray:
        """Stacked (q, q̇) state."""
        return np.concatenate([self.q, self.qd])

    @classmethod
    def from_vector(cls, x: np.ndarray) -> "JointState":
        n = len(x) // 2
        return cls(x[:n], x[n:])

    def to_dict(self) -> Dict[str, list]:
        return {"q": self.q.tolist(), "qd": self.qd.tolist(), "qdd": self.qdd.tolist()}
