"""Serial-chain kinematics, robot geometry and the closed-chain two-arm coupling.

Quaternions are stored scalar-first (w, x, y, z). Every batch routine takes a
joint matrix of shape (N, n) and returns world-frame quantities, so the planner
can evaluate all collocation samples of one arm in a single call.
"""

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import DimensionError, FormatError, MaxIterationsError, OutOfReachError

logger = logging.getLogger(__name__)

ROBOT_FORMAT_VERSION = 1
ROBOTS_DIR = Path(__file__).parent / "robots"

# Inverse kinematics defaults (damped least squares)
IK_DAMPING = 1e-2
IK_MAX_ITERATIONS = 200
IK_POSITION_TOL = 1e-4
IK_ORIENTATION_TOL = 1e-3


# --- quaternion helpers ------------------------------------------------------


def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    return np.asarray(q, dtype=float) * np.array([1.0, -1.0, -1.0, -1.0])


def quat_component_bound(angle: float) -> float:
    """Largest quaternion component change of a rotation by `angle` rad: 2 sin(angle / 4)."""
    return 2.0 * float(np.sin(angle / 4.0))


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product, broadcasting over leading axes."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    aw, ax, ay, az = np.moveaxis(a, -1, 0)
    bw, bx, by, bz = np.moveaxis(b, -1, 0)
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def _stack_rows(rows: list) -> np.ndarray:
    return np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)


def quat_left_matrix(q: np.ndarray) -> np.ndarray:
    """L(q) with q ⊗ p = L(q) @ p; (..., 4) -> (..., 4, 4)."""
    w, x, y, z = np.moveaxis(np.asarray(q, dtype=float), -1, 0)
    return _stack_rows([[w, -x, -y, -z], [x, w, -z, y], [y, z, w, -x], [z, -y, x, w]])


def quat_right_matrix(q: np.ndarray) -> np.ndarray:
    """R(q) with p ⊗ q = R(q) @ p; (..., 4) -> (..., 4, 4)."""
    w, x, y, z = np.moveaxis(np.asarray(q, dtype=float), -1, 0)
    return _stack_rows([[w, -x, -y, -z], [x, w, z, -y], [y, -z, w, x], [z, y, -x, w]])


def matrix_to_quat(rotation: np.ndarray) -> np.ndarray:
    """Rotation matrix (..., 3, 3) to unit quaternion (..., 4) with w >= 0."""
    xyzw = Rotation.from_matrix(rotation.reshape(-1, 3, 3)).as_quat()
    q = xyzw[:, [3, 0, 1, 2]]
    q[q[:, 0] < 0] *= -1.0
    q = quat_normalize(q)
    return q.reshape(rotation.shape[:-2] + (4,))


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    flat = q.reshape(-1, 4)
    mats = Rotation.from_quat(flat[:, [1, 2, 3, 0]]).as_matrix()
    return mats.reshape(q.shape[:-1] + (3, 3))


def rotation_error(q_a: np.ndarray, q_b: np.ndarray) -> np.ndarray:
    """Axis-angle of the relative rotation q_a ⊗ q_b⁻¹ (world frame), double cover fixed."""
    rel = quat_multiply(q_a, quat_conjugate(q_b))
    if rel[0] < 0:
        rel = -rel
    return Rotation.from_quat(rel[[1, 2, 3, 0]]).as_rotvec()


def skew(v: np.ndarray) -> np.ndarray:
    """Skew matrices for (..., 3) vectors."""
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def axis_rotation(axis: np.ndarray, angles: np.ndarray) -> np.ndarray:
    """Rodrigues rotation matrices (N, 3, 3) about a unit axis."""
    angles = np.asarray(angles, dtype=float)
    k = skew(axis)
    s = np.sin(angles)[:, None, None]
    c = np.cos(angles)[:, None, None]
    return np.eye(3) + s * k + (1.0 - c) * (k @ k)


def transform_from_xyz_rpy(xyz: Sequence[float], rpy: Sequence[float]) -> np.ndarray:
    mat = np.eye(4)
    mat[:3, :3] = Rotation.from_euler("xyz", rpy).as_matrix()
    mat[:3, 3] = xyz
    return mat


# --- poses -------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid pose: position (m) and unit quaternion (w, x, y, z)."""

    position: np.ndarray
    orientation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))

    def __post_init__(self):
        position = np.asarray(self.position, dtype=float).reshape(3)
        orientation = np.asarray(self.orientation, dtype=float).reshape(4)
        norm = np.linalg.norm(orientation)
        if norm == 0.0:
            raise DimensionError("Zero quaternion")
        object.__setattr__(self, "position", position)
        object.__setattr__(self, "orientation", orientation / norm)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.zeros(3))

    @classmethod
    def from_matrix(cls, mat: np.ndarray) -> "Pose":
        return cls(mat[:3, 3], matrix_to_quat(mat[:3, :3]))

    @classmethod
    def from_vector(cls, vec: Sequence[float]) -> "Pose":
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (7,):
            raise DimensionError(f"Pose vector needs 7 entries, got {vec.shape}")
        return cls(vec[:3], vec[3:])

    @classmethod
    def from_xyz_rpy(cls, xyz: Sequence[float], rpy: Sequence[float] = (0.0, 0.0, 0.0)) -> "Pose":
        return cls.from_matrix(transform_from_xyz_rpy(xyz, rpy))

    def matrix(self) -> np.ndarray:
        mat = np.eye(4)
        mat[:3, :3] = quat_to_matrix(self.orientation)
        mat[:3, 3] = self.position
        return mat

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.position, self.orientation])

    def compose(self, other: "Pose") -> "Pose":
        return Pose.from_matrix(self.matrix() @ other.matrix())

    def inverse(self) -> "Pose":
        return Pose.from_matrix(np.linalg.inv(self.matrix()))


def pose_difference(a: Pose, b: Pose) -> np.ndarray:
    """6-vector: position a - b and axis-angle of a relative to b."""
    return np.concatenate([a.position - b.position, rotation_error(a.orientation, b.orientation)])


# --- robot model -------------------------------------------------------------


@dataclass(frozen=True)
class CollisionSphere:
    link: int
    center: tuple  # link frame (m)
    radius: float


@dataclass(frozen=True)
class ControlPoint:
    link: int
    point: tuple  # link frame (m)


@dataclass(frozen=True, eq=False)
class RobotModel:
    """Serial chain of revolute joints with collision and kernel geometry.

    Link i is the frame after joint i. The base pose places the chain in the
    world; it is identity for a model loaded from file and set by
    ClosedChainSystem.placed().
    """

    name: str
    joint_origins: np.ndarray  # (n, 4, 4) parent -> joint frame
    joint_axes: np.ndarray  # (n, 3) unit axes in joint frame
    q_min: np.ndarray
    q_max: np.ndarray
    v_limit: np.ndarray
    a_limit: np.ndarray
    tool: np.ndarray  # (4, 4) last link -> end effector
    collision_spheres: tuple = ()
    fk_control_points: tuple = ()
    group_assignment: dict = field(default_factory=dict)
    base: Pose = field(default_factory=Pose.identity)
    camera_mount: Optional[np.ndarray] = None  # (4, 4) end effector -> camera

    def __post_init__(self):
        n = self.joint_count
        for name in ("q_min", "q_max", "v_limit", "a_limit"):
            value = np.asarray(getattr(self, name), dtype=float)
            if value.shape != (n,):
                raise DimensionError(f"{self.name}: {name} has shape {value.shape}, expected ({n},)")
            object.__setattr__(self, name, value)
        axes = np.asarray(self.joint_axes, dtype=float)
        object.__setattr__(self, "joint_axes", axes / np.linalg.norm(axes, axis=1, keepdims=True))
        if np.any(self.q_min >= self.q_max):
            raise FormatError(f"{self.name}: q_min must be below q_max")
        if any(s.radius <= 0 for s in self.collision_spheres):
            raise FormatError(f"{self.name}: sphere radii must be positive")
        if set(self.group_assignment) != set(range(n)):
            raise FormatError(f"{self.name}: every link needs exactly one collision group")
        for group in self.groups:
            if not self.group_control_points(group):
                raise FormatError(f"{self.name}: group {group} has no FK control points")

    @property
    def joint_count(self) -> int:
        return len(self.joint_origins)

    @property
    def groups(self) -> list[int]:
        return sorted(set(self.group_assignment.values()))

    def group_links(self, group: int) -> list[int]:
        return [link for link, g in sorted(self.group_assignment.items()) if g == group]

    def group_spheres(self, group: int) -> list[CollisionSphere]:
        links = set(self.group_links(group))
        return [s for s in self.collision_spheres if s.link in links]

    def group_control_points(self, group: int) -> list[ControlPoint]:
        links = set(self.group_links(group))
        return [c for c in self.fk_control_points if c.link in links]

    @property
    def q_center(self) -> np.ndarray:
        return 0.5 * (self.q_min + self.q_max)

    def clamp(self, q: np.ndarray) -> np.ndarray:
        return np.clip(q, self.q_min, self.q_max)

    def chain_origin(self) -> np.ndarray:
        """World position of the first joint."""
        return (self.base.matrix() @ self.joint_origins[0])[:3, 3]

    def reach(self) -> float:
        """Upper bound on the distance from the first joint to the end effector."""
        lengths = [np.linalg.norm(o[:3, 3]) for o in self.joint_origins[1:]]
        return float(sum(lengths) + np.linalg.norm(self.tool[:3, 3]))

    def check_q(self, q: np.ndarray) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        if q.shape[-1:] != (self.joint_count,):
            raise DimensionError(
                f"{self.name}: expected {self.joint_count} joints, got shape {q.shape}"
            )
        return q


def load_robot_model(path) -> RobotModel:
    """Load a versioned robot data file (schema in src/robots/README.md)."""
    path = Path(path)
    if not path.is_absolute() and not path.exists():
        path = ROBOTS_DIR / path
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise FormatError(f"Cannot read robot model {path}: {e}")
    if data.get("format_version") != ROBOT_FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format_version {data.get('format_version')}")
    try:
        joints = data["joints"]
        camera = data.get("camera_mount")
        model = RobotModel(
            name=data["name"],
            joint_origins=np.array(
                [transform_from_xyz_rpy(j["xyz"], j.get("rpy", (0, 0, 0))) for j in joints]
            ),
            joint_axes=np.array([j.get("axis", (0, 0, 1)) for j in joints], dtype=float),
            q_min=[j["q_min"] for j in joints],
            q_max=[j["q_max"] for j in joints],
            v_limit=[j["v_limit"] for j in joints],
            a_limit=[j["a_limit"] for j in joints],
            tool=transform_from_xyz_rpy(data["tool"]["xyz"], data["tool"].get("rpy", (0, 0, 0))),
            collision_spheres=tuple(
                CollisionSphere(s["link"], tuple(s["center"]), float(s["radius"]))
                for s in data["collision_spheres"]
            ),
            fk_control_points=tuple(
                ControlPoint(c["link"], tuple(c["point"])) for c in data["fk_control_points"]
            ),
            group_assignment={
                int(link): int(group) for group, links in data["groups"].items() for link in links
            },
            camera_mount=(
                transform_from_xyz_rpy(camera["xyz"], camera.get("rpy", (0, 0, 0)))
                if camera
                else None
            ),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError(f"{path}: malformed robot model: {e}")
    logger.debug(f"Loaded robot model {model.name} ({model.joint_count} joints) from {path}")
    return model


# --- forward kinematics ------------------------------------------------------


def link_transforms(model: RobotModel, Q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """World transforms of every link and of the end effector.

    Q is (N, n); returns links (N, n, 4, 4) and end effector (N, 4, 4).
    """
    Q = model.check_q(np.atleast_2d(Q))
    count = Q.shape[0]
    links = np.empty((count, model.joint_count, 4, 4))
    current = np.broadcast_to(model.base.matrix(), (count, 4, 4))
    for j in range(model.joint_count):
        motion = np.zeros((count, 4, 4))
        motion[:, :3, :3] = axis_rotation(model.joint_axes[j], Q[:, j])
        motion[:, 3, 3] = 1.0
        current = current @ model.joint_origins[j] @ motion
        links[:, j] = current
    return links, current @ model.tool


def forward_kinematics(model: RobotModel, q: np.ndarray) -> tuple[list[Pose], Pose]:
    """World pose of every link frame plus the end effector."""
    q = model.check_q(q)
    if q.ndim != 1:
        raise DimensionError("forward_kinematics takes a single joint vector")
    links, ee = link_transforms(model, q[None, :])
    return [Pose.from_matrix(m) for m in links[0]], Pose.from_matrix(ee[0])


def _joint_axes_world(model: RobotModel, links: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """World axis (N, n, 3) and origin (N, n, 3) of every joint."""
    axes = np.einsum("knij,nj->kni", links[:, :, :3, :3], model.joint_axes)
    return axes, links[:, :, :3, 3]


def frame_jacobian(
    model: RobotModel, Q: np.ndarray, offset: Optional[np.ndarray] = None
) -> tuple[np.ndarray, np.ndarray]:
    """Transform (N, 4, 4) and world Jacobian (N, 6, n) of the frame EE · offset."""
    links, ee = link_transforms(model, Q)
    frame = ee if offset is None else ee @ offset
    axes, origins = _joint_axes_world(model, links)
    lever = frame[:, None, :3, 3] - origins
    jac = np.concatenate([np.cross(axes, lever), axes], axis=2).transpose(0, 2, 1)
    return frame, jac


def jacobian(model: RobotModel, q: np.ndarray) -> np.ndarray:
    """6 x n end-effector Jacobian (linear; angular) in the world frame."""
    q = model.check_q(q)
    return frame_jacobian(model, q[None, :])[1][0]


def point_positions(model: RobotModel, Q: np.ndarray, points: Sequence) -> np.ndarray:
    """World positions (N, P, 3) of link-attached points (ControlPoint or CollisionSphere)."""
    links, _ = link_transforms(model, Q)
    return _points_from_links(links, points)


def _points_from_links(links: np.ndarray, points: Sequence) -> np.ndarray:
    out = np.empty((links.shape[0], len(points), 3))
    for p, item in enumerate(points):
        local = np.asarray(getattr(item, "point", None) or item.center, dtype=float)
        frame = links[:, item.link]
        out[:, p] = frame[:, :3, :3] @ local + frame[:, :3, 3]
    return out


def point_jacobians(model: RobotModel, Q: np.ndarray, points: Sequence) -> tuple[np.ndarray, np.ndarray]:
    """Positions (N, P, 3) and linear Jacobians (N, P, 3, n) of link-attached points."""
    links, _ = link_transforms(model, Q)
    positions = _points_from_links(links, points)
    axes, origins = _joint_axes_world(model, links)
    jac = np.zeros(positions.shape + (model.joint_count,))
    for p, item in enumerate(points):
        upto = item.link + 1
        lever = positions[:, p, None, :] - origins[:, :upto]
        jac[:, p, :, :upto] = np.cross(axes[:, :upto], lever).transpose(0, 2, 1)
    return positions, jac


# --- inverse kinematics ------------------------------------------------------


def inverse_kinematics(
    model: RobotModel,
    target: Pose,
    seed: np.ndarray,
    position_only: bool = False,
    offset: Optional[np.ndarray] = None,
    damping: float = IK_DAMPING,
    max_iterations: int = IK_MAX_ITERATIONS,
    position_tol: float = IK_POSITION_TOL,
    orientation_tol: float = IK_ORIENTATION_TOL,
) -> np.ndarray:
    """Damped least squares IK with joint-limit clamping per iteration.

    `offset` targets the frame EE · offset (e.g. a camera mount) instead of the
    end effector.

    Raises:
        OutOfReachError: target farther from the first joint than the chain reach
        MaxIterationsError: no convergence within max_iterations
    """
    q = model.clamp(model.check_q(seed).astype(float))
    extra = 0.0 if offset is None else float(np.linalg.norm(offset[:3, 3]))
    distance = np.linalg.norm(target.position - model.chain_origin())
    if distance > model.reach() + extra + position_tol:
        raise OutOfReachError(
            f"{model.name}: target {distance:.3f} m away exceeds reach {model.reach() + extra:.3f} m"
        )
    target_rot = quat_to_matrix(target.orientation)
    rows = 3 if position_only else 6
    for iteration in range(max_iterations + 1):
        frame, jac = frame_jacobian(model, q[None, :], offset)
        err_pos = target.position - frame[0, :3, 3]
        err = err_pos
        if not position_only:
            err_rot = Rotation.from_matrix(target_rot @ frame[0, :3, :3].T).as_rotvec()
            err = np.concatenate([err_pos, err_rot])
        converged = np.linalg.norm(err_pos) <= position_tol and (
            position_only or np.linalg.norm(err[3:]) <= orientation_tol
        )
        if converged:
            return q
        if iteration == max_iterations:
            break
        J = jac[0, :rows]
        step = J.T @ np.linalg.solve(J @ J.T + damping**2 * np.eye(rows), err)
        q = model.clamp(q + step)
    raise MaxIterationsError(f"{model.name}: IK did not converge in {max_iterations} iterations")


# --- closed chain ------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ClosedChainSystem:
    """Two arms rigidly grasping one object."""

    robots: tuple  # (RobotModel, RobotModel)
    base_poses: tuple  # (Pose, Pose)
    grasp_transforms: tuple  # (Pose, Pose): end effector -> object
    payload_spheres: tuple = ()  # ((center in object frame), radius) pairs

    def placed(self, robot_index: int) -> RobotModel:
        """Model of robot 1 or 2 with its world base pose applied."""
        i = _check_index(robot_index)
        return replace(self.robots[i], base=self.base_poses[i])

    def assembly_model(self, robot_index: int) -> RobotModel:
        """Placed model whose last link also carries the payload spheres (robot 1 only)."""
        model = self.placed(robot_index)
        if robot_index != 1 or not self.payload_spheres:
            return model
        last = model.joint_count - 1
        to_link = model.tool @ self.grasp_transforms[0].matrix()
        extra = tuple(
            CollisionSphere(last, tuple((to_link @ np.append(center, 1.0))[:3]), float(radius))
            for center, radius in self.payload_spheres
        )
        return replace(model, collision_spheres=model.collision_spheres + extra)

    @property
    def joint_counts(self) -> tuple[int, int]:
        return self.robots[0].joint_count, self.robots[1].joint_count

    @property
    def state_dim(self) -> int:
        n1, n2 = self.joint_counts
        return n1 + n2 + 7

    def split_state(self, z: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(…, d) state to q1, q2 and the 7-number object pose."""
        z = np.asarray(z, dtype=float)
        if z.shape[-1] != self.state_dim:
            raise DimensionError(f"State needs {self.state_dim} entries, got {z.shape[-1]}")
        n1, n2 = self.joint_counts
        return z[..., :n1], z[..., n1:n1 + n2], z[..., n1 + n2:]

    def state_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Joint limits; the object block is unbounded (the chain limits it)."""
        r1, r2 = self.robots
        inf = np.full(7, np.inf)
        return (
            np.concatenate([r1.q_min, r2.q_min, -inf]),
            np.concatenate([r1.q_max, r2.q_max, inf]),
        )


@dataclass(frozen=True, eq=False)
class SystemState:
    q1: np.ndarray
    q2: np.ndarray
    x_obj: Pose

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.q1, self.q2, self.x_obj.as_vector()])

    @classmethod
    def from_vector(cls, system: ClosedChainSystem, z: np.ndarray) -> "SystemState":
        q1, q2, pose = system.split_state(z)
        return cls(np.array(q1), np.array(q2), Pose.from_vector(pose))


def _check_index(robot_index: int) -> int:
    if robot_index not in (1, 2):
        raise DimensionError(f"robot_index must be 1 or 2, got {robot_index}")
    return robot_index - 1


def object_frames(system: ClosedChainSystem, robot_index: int, Q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Object transforms (N, 4, 4) and object-frame Jacobians (N, 6, n) seen by one robot."""
    i = _check_index(robot_index)
    return frame_jacobian(system.placed(robot_index), Q, system.grasp_transforms[i].matrix())


def object_pose(system: ClosedChainSystem, robot_index: int, q: np.ndarray) -> Pose:
    """World object pose implied by one robot: base · T_EE(q) · grasp."""
    frames, _ = object_frames(system, robot_index, np.atleast_2d(q))
    return Pose.from_matrix(frames[0])


def chain_residual(system: ClosedChainSystem, q1: np.ndarray, q2: np.ndarray) -> np.ndarray:
    """Position difference and relative axis-angle between the two object estimates."""
    return pose_difference(object_pose(system, 1, q1), object_pose(system, 2, q2))


def state_from_joints(system: ClosedChainSystem, q1: np.ndarray, q2: np.ndarray) -> SystemState:
    return SystemState(np.array(q1, dtype=float), np.array(q2, dtype=float), object_pose(system, 1, q1))


def solve_closed_chain(
    system: ClosedChainSystem,
    q1: np.ndarray,
    q2: np.ndarray,
    target: Optional[Pose] = None,
    max_iterations: int = 200,
    tol: float = 1e-10,
) -> tuple[np.ndarray, np.ndarray]:
    """Project a joint pair onto the closed-chain manifold (optionally at a target object pose).

    Gauss-Newton with minimum-norm steps and limit clamping.
    """
    r1, r2 = system.placed(1), system.placed(2)
    q1 = r1.clamp(np.asarray(q1, dtype=float))
    q2 = r2.clamp(np.asarray(q2, dtype=float))
    n1 = r1.joint_count
    for _ in range(max_iterations):
        f1, j1 = object_frames(system, 1, q1[None, :])
        f2, j2 = object_frames(system, 2, q2[None, :])
        p1, p2 = Pose.from_matrix(f1[0]), Pose.from_matrix(f2[0])
        residual = [pose_difference(p1, p2)]
        jac = [np.hstack([j1[0], -j2[0]])]
        if target is not None:
            residual.append(pose_difference(p1, target))
            jac.append(np.hstack([j1[0], np.zeros_like(j2[0])]))
        r = np.concatenate(residual)
        if r @ r < tol:
            return q1, q2
        step = np.linalg.lstsq(np.vstack(jac), -r, rcond=None)[0]
        q1 = r1.clamp(q1 + step[:n1])
        q2 = r2.clamp(q2 + step[n1:])
    raise MaxIterationsError("Closed-chain projection did not converge")
