"""Robot descriptions shipped with the package."""

from pathlib import Path
from typing import Optional, Union

from app.exceptions import UrdfError
from app.models.robot import RobotModel
from app.services.urdf_parser import parse_urdf_file

ROBOTS_DIR = Path(__file__).resolve().parent

BUNDLED_ROBOTS = ("pendulum", "double_integrator", "iiwa", "hyq", "atlas")


def robot_path(name: str) -> Path:
    if name not in BUNDLED_ROBOTS:
        raise UrdfError(
            f"unknown bundled robot {name!r}; choose one of {', '.join(BUNDLED_ROBOTS)}"
        )
    return ROBOTS_DIR / f"{name}.urdf"


def resolve_robot(robot: Union[str, Path], base_dir: Optional[Path] = None) -> Path:
    """A bundled robot name or a URDF path (relative paths against ``base_dir``)."""
    if isinstance(robot, str) and robot in BUNDLED_ROBOTS:
        return robot_path(robot)
    path = Path(robot)
    if not path.is_absolute() and base_dir is not None:
        path = base_dir / path
    return path


def load_robot(robot: Union[str, Path], base_dir: Optional[Path] = None) -> RobotModel:
    return parse_urdf_file(resolve_robot(robot, base_dir))
