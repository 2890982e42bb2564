"""URDF ingestion and canonical serialization.

Only the kinematic/inertial subset is read (link, joint, inertial, origin, axis,
limit). Fixed joints are merged into the nearest moving ancestor and bodies are
numbered in depth-first preorder, which is parent-before-child.
"""

from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
from lxml import etree

from app.exceptions import UrdfError
from app.models.robot import (
    BASE,
    DEFAULT_POSITION_LIMIT,
    DEFAULT_VELOCITY_LIMIT,
    PRISMATIC,
    REVOLUTE,
    Frame,
    Joint,
    RobotModel,
)
from app.models.spatial import (
    SpatialInertia,
    SpatialTransform,
    clean,
    rotation_to_rpy,
    rpy_to_rotation,
)
from app.utils.logging import get_logger

logger = get_logger(__name__)

AXIS_NORM_TOL = 1e-6

_MOVING = {"revolute": REVOLUTE, "continuous": REVOLUTE, "prismatic": PRISMATIC}
_UNSUPPORTED = {"floating", "planar"}


def _floats(text: Optional[str], count: int, what: str) -> np.ndarray:
    if text is None:
        return np.zeros(count)
    try:
        values = np.array([float(tok) for tok in text.split()])
    except ValueError:
        raise UrdfError(f"{what}: expected {count} numbers, got {text!r}")
    if values.shape != (count,) or not np.all(np.isfinite(values)):
        raise UrdfError(f"{what}: expected {count} finite numbers, got {text!r}")
    return values


def _attr_float(elem, name: str, what: str, default: Optional[float] = None):
    raw = elem.get(name) if elem is not None else None
    if raw is None:
        return default
    try:
        value = float(raw)
    except ValueError:
        raise UrdfError(f"{what}: attribute {name}={raw!r} is not a number")
    if not np.isfinite(value):
        raise UrdfError(f"{what}: attribute {name} must be finite")
    return value


def _origin(elem, what: str) -> SpatialTransform:
    origin = elem.find("origin")
    if origin is None:
        return SpatialTransform.identity()
    xyz = _floats(origin.get("xyz"), 3, f"{what} origin xyz")
    rpy = _floats(origin.get("rpy"), 3, f"{what} origin rpy")
    return SpatialTransform.from_origin(xyz, rpy)


def _link_inertia(link) -> SpatialInertia:
    name = link.get("name")
    inertial = link.find("inertial")
    if inertial is None:
        return SpatialInertia.zero()
    mass = _attr_float(inertial.find("mass"), "value", f"link {name} mass")
    if mass is None:
        raise UrdfError(f"link {name}: inertial element without a mass")
    if mass <= 0.0:
        raise UrdfError(f"link {name}: mass must be positive, got {mass}")
    origin = inertial.find("origin")
    com = _floats(origin.get("xyz") if origin is not None else None, 3, f"link {name} com")
    rpy = _floats(origin.get("rpy") if origin is not None else None, 3, f"link {name} rpy")
    tensor = inertial.find("inertia")
    keys = ("ixx", "ixy", "ixz", "iyy", "iyz", "izz")
    ixx, ixy, ixz, iyy, iyz, izz = (
        _attr_float(tensor, k, f"link {name} inertia", 0.0) for k in keys
    )
    local = np.array([[ixx, ixy, ixz], [ixy, iyy, iyz], [ixz, iyz, izz]])
    rot = rpy_to_rotation(rpy)
    inertia = SpatialInertia.from_mass_com_inertia(mass, com, rot @ local @ rot.T)
    if not inertia.is_physical():
        raise UrdfError(f"link {name}: rotational inertia is not positive semidefinite")
    return inertia


def _axis(joint_elem, name: str) -> np.ndarray:
    axis_elem = joint_elem.find("axis")
    axis = (
        np.array([1.0, 0.0, 0.0])
        if axis_elem is None
        else _floats(axis_elem.get("xyz"), 3, f"joint {name} axis")
    )
    norm = np.linalg.norm(axis)
    if abs(norm - 1.0) > AXIS_NORM_TOL:
        raise UrdfError(f"joint {name}: axis norm {norm:.6g} is not within 1e-6 of 1")
    return clean(axis / norm)


def parse_urdf(text: Union[str, bytes]) -> RobotModel:
    """Parse URDF XML text into a ``RobotModel``."""
    data = text.encode("utf-8") if isinstance(text, str) else text
    try:
        root = etree.fromstring(data, parser=etree.XMLParser(remove_comments=True))
    except etree.XMLSyntaxError as e:
        raise UrdfError(f"malformed URDF XML: {e}")
    if root.tag != "robot":
        raise UrdfError(f"expected a <robot> root element, got <{root.tag}>")

    links: Dict[str, SpatialInertia] = {}
    for link in root.findall("link"):
        name = link.get("name")
        if not name:
            raise UrdfError("link without a name")
        if name in links:
            raise UrdfError(f"duplicate link {name}")
        links[name] = _link_inertia(link)
    if not links:
        raise UrdfError("robot has no links")

    children: Dict[str, List] = {name: [] for name in links}
    parent_of: Dict[str, str] = {}
    for joint in root.findall("joint"):
        name = joint.get("name")
        kind = joint.get("type")
        if kind in _UNSUPPORTED:
            raise UrdfError(f"joint {name}: unsupported joint type {kind!r}")
        if kind not in _MOVING and kind != "fixed":
            raise UrdfError(f"joint {name}: unknown joint type {kind!r}")
        parent_elem, child_elem = joint.find("parent"), joint.find("child")
        if parent_elem is None or child_elem is None:
            raise UrdfError(f"joint {name}: parent and child are required")
        parent, child = parent_elem.get("link"), child_elem.get("link")
        for link_name in (parent, child):
            if link_name not in links:
                raise UrdfError(f"joint {name} references unknown link {link_name!r}")
        if child in parent_of:
            raise UrdfError(f"link {child} has more than one parent joint (cycle)")
        parent_of[child] = parent
        children[parent].append(joint)

    roots = [name for name in links if name not in parent_of]
    if not roots:
        raise UrdfError("kinematic structure is cyclic: no root link")
    if len(roots) > 1:
        raise UrdfError(f"links unreachable from the base: {', '.join(roots[1:])}")
    base = roots[0]

    joints: List[Joint] = []
    frames: List[Frame] = []
    inertias: List[SpatialInertia] = []
    visited = {base}

    # (joint element, owning body, transform body -> parent link); DFS preorder
    stack: List[Tuple[object, int, SpatialTransform]] = []

    def push_children(link: str, body: int, to_link: SpatialTransform):
        for child_joint in reversed(children[link]):
            stack.append((child_joint, body, to_link))

    push_children(base, BASE, SpatialTransform.identity())
    while stack:
        joint, body, to_link = stack.pop()
        name = joint.get("name")
        child = joint.find("child").get("link")
        if child in visited:
            raise UrdfError(f"kinematic structure is cyclic at link {child}")
        visited.add(child)
        to_joint = _origin(joint, f"joint {name}").compose(to_link)
        kind = joint.get("type")
        if kind == "fixed":
            frames.append(Frame(child, body, to_joint))
            if body != BASE:
                inertias[body] = inertias[body] + links[child].transformed(to_joint)
            push_children(child, body, to_joint)
            continue
        limit = joint.find("limit")
        what = f"joint {name} limit"
        if kind == "continuous":
            lower, upper = -DEFAULT_POSITION_LIMIT, DEFAULT_POSITION_LIMIT
        else:
            lower = _attr_float(limit, "lower", what, -DEFAULT_POSITION_LIMIT)
            upper = _attr_float(limit, "upper", what, DEFAULT_POSITION_LIMIT)
            if lower > upper:
                raise UrdfError(f"joint {name}: lower limit exceeds upper limit")
        velocity = _attr_float(limit, "velocity", what, DEFAULT_VELOCITY_LIMIT)
        effort = _attr_float(limit, "effort", what)
        joints.append(
            Joint(
                name=name,
                link=child,
                kind=_MOVING[kind],
                axis=_axis(joint, name),
                parent=body,
                tree_transform=to_joint,
                inertia=SpatialInertia.zero(),
                lower=lower,
                upper=upper,
                velocity_limit=velocity if velocity > 0 else DEFAULT_VELOCITY_LIMIT,
                effort_limit=effort if effort is not None and effort > 0 else None,
            )
        )
        inertias.append(links[child])
        push_children(child, len(joints) - 1, SpatialTransform.identity())

    unreachable = sorted(set(links) - visited)
    if unreachable:
        raise UrdfError(f"links unreachable from the base: {', '.join(unreachable)}")
    if not joints:
        raise UrdfError("robot has no moving joints")

    final = []
    for joint, inertia in zip(joints, inertias):
        if inertia.mass <= 0.0:
            raise UrdfError(f"body {joint.link} has non-positive mass")
        final.append(_with_inertia(joint, inertia))

    model = RobotModel(
        name=root.get("name", "robot"),
        base_link=base,
        joints=tuple(final),
        frames=tuple(frames),
    )
    logger.debug(
        f"Parsed URDF {model.name}: {model.n} bodies, {len(frames)} fixed frames"
    )
    return model


def _with_inertia(joint: Joint, inertia: SpatialInertia) -> Joint:
    return Joint(
        name=joint.name,
        link=joint.link,
        kind=joint.kind,
        axis=joint.axis,
        parent=joint.parent,
        tree_transform=joint.tree_transform,
        inertia=inertia,
        lower=joint.lower,
        upper=joint.upper,
        velocity_limit=joint.velocity_limit,
        effort_limit=joint.effort_limit,
    )


def parse_urdf_file(path: Union[str, Path]) -> RobotModel:
    path = Path(path)
    if not path.is_file():
        raise UrdfError(f"URDF file not found: {path}")
    return parse_urdf(path.read_bytes())


# canonical form


def _fmt(values) -> str:
    return " ".join("%.12g" % v for v in clean(np.atleast_1d(values), 1e-12))


def _origin_elem(parent, X: SpatialTransform):
    etree.SubElement(
        parent, "origin", xyz=_fmt(X.r), rpy=_fmt(rotation_to_rpy(X.rotation()))
    )


def to_urdf(model: RobotModel) -> str:
    """Canonical URDF text for ``model``.

    Merged fixed links come back as massless links on fixed joints, so parsing
    the output reproduces the same model.
    """
    robot = etree.Element("robot", name=model.name)
    etree.SubElement(robot, "link", name=model.base_link)
    for joint in model.joints:
        link = etree.SubElement(robot, "link", name=joint.link)
        inertial = etree.SubElement(link, "inertial")
        inertia = joint.inertia
        etree.SubElement(inertial, "origin", xyz=_fmt(inertia.com), rpy=_fmt(np.zeros(3)))
        etree.SubElement(inertial, "mass", value=_fmt(inertia.mass))
        ic = clean(inertia.inertia_at_com, 1e-12)
        etree.SubElement(
            inertial,
            "inertia",
            ixx=_fmt(ic[0, 0]),
            ixy=_fmt(ic[0, 1]),
            ixz=_fmt(ic[0, 2]),
            iyy=_fmt(ic[1, 1]),
            iyz=_fmt(ic[1, 2]),
            izz=_fmt(ic[2, 2]),
        )
    frames = sorted(model.frames, key=lambda f: (f.body, f.name))
    for frame in frames:
        etree.SubElement(robot, "link", name=frame.name)

    for joint in model.joints:
        parent = model.base_link if joint.parent == BASE else model.joints[joint.parent].link
        kind = "revolute" if joint.kind == REVOLUTE else "prismatic"
        elem = etree.SubElement(robot, "joint", name=joint.name, type=kind)
        etree.SubElement(elem, "parent", link=parent)
        etree.SubElement(elem, "child", link=joint.link)
        _origin_elem(elem, joint.tree_transform)
        etree.SubElement(elem, "axis", xyz=_fmt(joint.axis))
        limits = {
            "lower": _fmt(joint.lower),
            "upper": _fmt(joint.upper),
            "velocity": _fmt(joint.velocity_limit),
        }
        if joint.effort_limit is not None:
            limits["effort"] = _fmt(joint.effort_limit)
        etree.SubElement(elem, "limit", **limits)
    for frame in frames:
        parent = model.base_link if frame.body == BASE else model.joints[frame.body].link
        elem = etree.SubElement(robot, "joint", name=f"{frame.name}_fixed", type="fixed")
        etree.SubElement(elem, "parent", link=parent)
        etree.SubElement(elem, "child", link=frame.name)
        _origin_elem(elem, frame.transform)
    return etree.tostring(robot, pretty_print=True, encoding="unicode")


def model_to_dict(model: RobotModel) -> dict:
    """JSON-ready dump of the canonical model, for debugging."""

    def parent_name(i: int) -> str:
        return model.base_link if i == BASE else model.joints[i].link

    return {
        "name": model.name,
        "base_link": model.base_link,
        "gravity": model.gravity.tolist(),
        "end_effector": model.end_effector_frame.name,
        "joints": [
            {
                "name": j.name,
                "link": j.link,
                "type": j.kind,
                "parent": parent_name(j.parent),
                "depth": model.depths[i],
                "axis": j.axis.tolist(),
                "origin": {
                    "xyz": clean(j.tree_transform.r).tolist(),
                    "rpy": clean(rotation_to_rpy(j.tree_transform.rotation())).tolist(),
                },
                "mass": j.inertia.mass,
                "com": clean(j.inertia.com).tolist(),
                "inertia": clean(j.inertia.inertia_at_com).tolist(),
                "limits": {
                    "lower": j.lower,
                    "upper": j.upper,
                    "velocity": j.velocity_limit,
                    "effort": j.effort_limit,
                },
            }
            for i, j in enumerate(model.joints)
        ],
        "frames": [
            {
                "name": f.name,
                "body": parent_name(f.body),
                "xyz": clean(f.transform.r).tolist(),
            }
            for f in model.frames
        ],
    }
