"""Shared fixtures: the planar two-arm system and small worlds."""

import numpy as np
import pytest

from src.geometry import ConvexPolytope, GeometricWorld, Obstacle
from src.kinematics import ClosedChainSystem, Pose, load_robot_model, solve_closed_chain, state_from_joints

START_Q1 = np.array([2.0943951, -2.0943951])
START_Q2 = np.array([-2.0943951, 2.0943951])


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: full scenario runs to the goal")


@pytest.fixture
def planar_model():
    return load_robot_model("planar_2link.json")


@pytest.fixture
def planar_system(planar_model):
    return ClosedChainSystem(
        robots=(planar_model, planar_model),
        base_poses=(Pose.identity(), Pose.from_xyz_rpy((1.6, 0.0, 0.0), (0.0, 0.0, np.pi))),
        grasp_transforms=(
            Pose.from_xyz_rpy((0.3, 0.0, 0.0)),
            Pose.from_xyz_rpy((0.3, 0.0, 0.0), (0.0, 0.0, np.pi)),
        ),
        payload_spheres=(((0.0, 0.0, 0.0), 0.1),),
    )


@pytest.fixture
def start_state(planar_system):
    q1, q2 = solve_closed_chain(planar_system, START_Q1, START_Q2)
    return state_from_joints(planar_system, q1, q2)


@pytest.fixture
def empty_world():
    return GeometricWorld()


@pytest.fixture
def block_world():
    """One box sitting where the first arm sweeps at q = (0, 0)."""
    return GeometricWorld((Obstacle(ConvexPolytope.box((1.0, 0.0, 0.0), (0.2, 0.2, 0.4)), name="block"),))


@pytest.fixture
def rng():
    return np.random.default_rng(7)
