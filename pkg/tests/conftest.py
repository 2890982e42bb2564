import numpy as np
import pytest

from app.robots import load_robot
from app.services.urdf_parser import parse_urdf


def serial_chain_urdf(n: int, name: str = "chain", length: float = 0.3) -> str:
    """URDF text of an ``n``-link revolute chain with alternating z/y axes."""
    links = ['<link name="base"/>']
    joints = []
    parent = "base"
    for i in range(n):
        link = f"link{i}"
        links.append(
            f"""
  <link name="{link}">
    <inertial>
      <origin xyz="0 0 {length / 2}" rpy="0 0 0"/>
      <mass value="{1.0 + 0.1 * i}"/>
      <inertia ixx="0.01" ixy="0" ixz="0" iyy="0.01" iyz="0" izz="0.005"/>
    </inertial>
  </link>"""
        )
        axis = "0 0 1" if i % 2 == 0 else "0 1 0"
        offset = 0.0 if i == 0 else length
        joints.append(
            f"""
  <joint name="j{i}" type="revolute">
    <parent link="{parent}"/>
    <child link="{link}"/>
    <origin xyz="0 0 {offset}" rpy="0 0 0"/>
    <axis xyz="{axis}"/>
    <limit lower="-2.5" upper="2.5" velocity="2" effort="100"/>
  </joint>"""
        )
        parent = link
    links.append('<link name="tip"/>')
    joints.append(
        f"""
  <joint name="tip_fixed" type="fixed">
    <parent link="{parent}"/>
    <child link="tip"/>
    <origin xyz="0 0 {length}" rpy="0 0 0"/>
  </joint>"""
    )
    return f'<?xml version="1.0"?>\n<robot name="{name}">\n' + "\n".join(links + joints) + "\n</robot>\n"


@pytest.fixture(scope="session")
def pendulum():
    return load_robot("pendulum")


@pytest.fixture(scope="session")
def double_integrator():
    return load_robot("double_integrator")


@pytest.fixture(scope="session")
def iiwa():
    return load_robot("iiwa")


@pytest.fixture(scope="session")
def hyq():
    return load_robot("hyq")


@pytest.fixture(scope="session")
def atlas():
    return load_robot("atlas")


@pytest.fixture(scope="session")
def chain7():
    return parse_urdf(serial_chain_urdf(7))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
