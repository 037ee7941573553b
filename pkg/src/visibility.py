"""Visibility support vectors and the vision cost for the eye-in-hand camera."""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .errors import DimensionError, IKError, NoValidPosesError
from .kinematics import (
    ControlPoint,
    Pose,
    RobotModel,
    inverse_kinematics,
    link_transforms,
    matrix_to_quat,
    point_jacobians,
    point_positions,
)
from .perception import OcclusionModel

logger = logging.getLogger(__name__)

VIS_SIGMA = 0.2
VIS_THRESHOLD = 0.5
REFRESH_DISTANCE = 0.05
DEFAULT_RADII = (0.3, 0.45, 0.6)
DEFAULT_AZIMUTHS = 8
DEFAULT_ELEVATIONS = (-0.4, 0.0, 0.4)
DEFAULT_ROLLS = 2
DEFAULT_POSITIONS = 5
HALF_FOV = np.pi / 6
# Arms with fewer joints cannot fix the full camera pose.
FULL_POSE_JOINTS = 6


@dataclass(frozen=True, eq=False)
class CandidateCameraPose:
    pose: Pose  # camera frame, z = optical axis
    ik_solution: Optional[np.ndarray] = None
    valid: bool = False


def _aim(position: np.ndarray, target: np.ndarray, roll: float) -> np.ndarray:
    """Rotation whose z axis points from position to target, rolled about z."""
    z = target - position
    z = z / np.linalg.norm(z)
    reference = np.array([0.0, 0.0, 1.0]) if abs(z[2]) < 0.99 else np.array([1.0, 0.0, 0.0])
    x = np.cross(reference, z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    c, s = np.cos(roll), np.sin(roll)
    return np.column_stack([c * x + s * y, -s * x + c * y, z])


def sample_camera_poses(
    p_place: np.ndarray,
    radii: Sequence[float] = DEFAULT_RADII,
    azimuths: Sequence[float] | int = DEFAULT_AZIMUTHS,
    elevations: Sequence[float] = DEFAULT_ELEVATIONS,
    roll_count: int = DEFAULT_ROLLS,
    positions: int = DEFAULT_POSITIONS,
    rng: Optional[np.random.Generator] = None,
) -> list[CandidateCameraPose]:
    """Positions on shells around p_place, each aimed at it with roll_count rolls.

    With positions > 1, every (radius, azimuth, elevation) cell is jittered in
    angle by up to half a cell; radii stay exact.
    """
    p_place = np.asarray(p_place, dtype=float)
    radii = np.atleast_1d(np.asarray(radii, dtype=float))
    if isinstance(azimuths, int):
        azimuths = np.linspace(0.0, 2 * np.pi, azimuths, endpoint=False)
    azimuths = np.atleast_1d(np.asarray(azimuths, dtype=float))
    elevations = np.atleast_1d(np.asarray(elevations, dtype=float))
    if not (radii.size and azimuths.size and elevations.size and roll_count >= 1 and positions >= 1):
        raise DimensionError("Camera pose sampling needs non-empty ranges")
    if np.any(radii <= 0):
        raise DimensionError(f"Radii must be positive, got {radii}")
    rng = rng or np.random.default_rng(0)
    az_step = 2 * np.pi / max(azimuths.size, 1)
    el_step = (np.ptp(elevations) / (elevations.size - 1)) if elevations.size > 1 else 0.0

    candidates = []
    for radius in radii:
        for azimuth in azimuths:
            for elevation in elevations:
                for k in range(positions):
                    az, el = azimuth, elevation
                    if k:
                        az += rng.uniform(-0.5, 0.5) * az_step
                        el += rng.uniform(-0.5, 0.5) * el_step
                    direction = np.array([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)])
                    position = p_place + radius * direction
                    for r in range(roll_count):
                        rotation = _aim(position, p_place, 2 * np.pi * r / roll_count)
                        candidates.append(CandidateCameraPose(Pose(position, matrix_to_quat(rotation))))
    return candidates


def camera_points(model: RobotModel) -> tuple[ControlPoint, ControlPoint]:
    """Camera position and wrist position as points on the last link."""
    if model.camera_mount is None:
        raise DimensionError(f"{model.name} has no camera mount")
    last = model.joint_count - 1
    camera = (model.tool @ model.camera_mount)[:3, 3]
    return ControlPoint(last, tuple(camera)), ControlPoint(last, (0.0, 0.0, 0.0))


def _camera_frame(model: RobotModel, q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    _, ee = link_transforms(model, q[None, :])
    frame = ee[0] @ model.camera_mount
    return frame[:3, 3], frame[:3, 2]


def validate_pose(
    candidate: CandidateCameraPose,
    model: RobotModel,
    occlusion: OcclusionModel,
    p_place: np.ndarray,
    seed: Optional[np.ndarray] = None,
    half_fov: float = HALF_FOV,
) -> CandidateCameraPose:
    """Valid iff IK reaches the camera pose and the sight line to p_place crosses no hull.

    Arms with fewer than six joints solve for the camera position only and
    require p_place inside the camera's half field of view.
    """
    p_place = np.asarray(p_place, dtype=float)
    full_pose = model.joint_count >= FULL_POSE_JOINTS
    seeds = [model.q_center] if seed is None else [np.asarray(seed, dtype=float), model.q_center]
    q = None
    for start in seeds:
        try:
            q = inverse_kinematics(
                model, candidate.pose, start, position_only=not full_pose, offset=model.camera_mount
            )
            break
        except IKError:
            continue
    if q is None:
        return replace(candidate, ik_solution=None, valid=False)
    camera, axis = _camera_frame(model, q)
    sight = p_place - camera
    distance = np.linalg.norm(sight)
    if not full_pose and distance > 0 and np.dot(axis, sight) / distance < np.cos(half_fov):
        return replace(candidate, ik_solution=q, valid=False)
    if occlusion.sight_blocked(camera, p_place):
        return replace(candidate, ik_solution=q, valid=False)
    return replace(candidate, ik_solution=q, valid=True)


@dataclass(frozen=True, eq=False)
class VisibilitySupportSet:
    """Kernel density over camera/wrist placements of valid candidates."""

    configurations: np.ndarray  # (M, n) IK solutions
    support_points: np.ndarray  # (M, 2, 3) camera and wrist positions
    weights: np.ndarray  # (M,)
    density: np.ndarray  # (M,) Y = K·1
    control_points: tuple
    sigma: float = VIS_SIGMA
    target: Optional[np.ndarray] = None

    @property
    def size(self) -> int:
        return self.weights.shape[0]

    @property
    def peak(self) -> float:
        return float(np.max(self.density))


def _similarity(a: np.ndarray, b: np.ndarray, sigma: float) -> np.ndarray:
    """exp(-mean control-point distance / sigma) between (N, P, 3) and (M, P, 3)."""
    dist = np.linalg.norm(a[:, None, :, :] - b[None, :, :, :], axis=3)
    return np.exp(-dist.mean(axis=2) / sigma)


def build_visibility_model(
    candidates: Sequence[CandidateCameraPose],
    model: RobotModel,
    sigma: float = VIS_SIGMA,
    target: Optional[np.ndarray] = None,
) -> VisibilitySupportSet:
    """Density-weighted kernel model over the valid candidates only.

    Raises:
        NoValidPosesError: no candidate is valid; widen the sampling ranges
    """
    valid = [c for c in candidates if c.valid and c.ik_solution is not None]
    if not valid:
        raise NoValidPosesError("No valid camera poses; widen the sampling ranges")
    points = camera_points(model)
    configurations = np.array([c.ik_solution for c in valid])
    support = point_positions(model, configurations, points)
    gram = _similarity(support, support, sigma)
    density = gram @ np.ones(len(valid))
    weights = np.linalg.lstsq(gram, density, rcond=None)[0]
    logger.info(f"Visibility model: {len(valid)} of {len(candidates)} candidates valid")
    return VisibilitySupportSet(
        configurations=configurations,
        support_points=support,
        weights=weights,
        density=density,
        control_points=points,
        sigma=sigma,
        target=None if target is None else np.asarray(target, dtype=float),
    )


def _check_built(vis: Optional[VisibilitySupportSet]) -> VisibilitySupportSet:
    if vis is None or vis.size == 0:
        raise NoValidPosesError("Visibility model has not been built")
    return vis


def visibility_scores(vis: VisibilitySupportSet, model: RobotModel, Q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Normalised scores (N,) in roughly [0, 1] and their gradients (N, n)."""
    vis = _check_built(vis)
    positions, jac = point_jacobians(model, np.atleast_2d(Q), vis.control_points)
    diff = positions[:, None, :, :] - vis.support_points[None, :, :, :]  # (N, M, P, 3)
    dist = np.linalg.norm(diff, axis=3)
    kernel = np.exp(-dist.mean(axis=2) / vis.sigma)  # (N, M)
    values = kernel @ vis.weights / vis.peak
    with np.errstate(divide="ignore", invalid="ignore"):
        unit = np.where(dist[..., None] > 0, diff / dist[..., None], 0.0)
    # d mean-distance / dq, averaged over control points
    d_mean = np.einsum("nmpi,npij->nmj", unit, jac) / len(vis.control_points)
    grads = -np.einsum("nm,m,nmj->nj", kernel, vis.weights, d_mean) / (vis.sigma * vis.peak)
    return values, grads


def visibility_score(vis: VisibilitySupportSet, model: RobotModel, q: np.ndarray) -> float:
    return float(visibility_scores(vis, model, model.check_q(q)[None, :])[0][0])


def visibility_cost(vis: VisibilitySupportSet, model: RobotModel, q: np.ndarray) -> tuple[float, np.ndarray]:
    """C_vis = -normalised score, with its joint gradient."""
    values, grads = visibility_scores(vis, model, model.check_q(q)[None, :])
    return -float(values[0]), -grads[0]


def occlusion_changed(old: Optional[OcclusionModel], new: OcclusionModel, distance: float = REFRESH_DISTANCE) -> bool:
    """True when a hull appeared, vanished, or moved its centroid by more than `distance`."""
    if old is None or len(old.obstacle_hulls) != len(new.obstacle_hulls):
        return True
    if not new.obstacle_hulls:
        return False
    a = np.array([h.centroid for h in old.obstacle_hulls])
    b = np.array([h.centroid for h in new.obstacle_hulls])
    nearest = np.min(np.linalg.norm(a[:, None, :] - b[None, :, :], axis=2), axis=1)
    return bool(np.any(nearest > distance))


def refresh_visibility_model(
    p_place: np.ndarray,
    model: RobotModel,
    occlusion: OcclusionModel,
    seed: Optional[np.ndarray] = None,
    sigma: float = VIS_SIGMA,
    radii: Sequence[float] = DEFAULT_RADII,
    azimuths: Sequence[float] | int = DEFAULT_AZIMUTHS,
    elevations: Sequence[float] = DEFAULT_ELEVATIONS,
    roll_count: int = DEFAULT_ROLLS,
    positions: int = DEFAULT_POSITIONS,
    rng: Optional[np.random.Generator] = None,
    workers: int = 1,
) -> tuple[VisibilitySupportSet, list[CandidateCameraPose]]:
    """Sample, validate and build in one pass; returns the model and every resolved candidate."""
    candidates = sample_camera_poses(p_place, radii, azimuths, elevations, roll_count, positions, rng)
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        resolved = list(pool.map(lambda c: validate_pose(c, model, occlusion, p_place, seed), candidates))
    return build_visibility_model(resolved, model, sigma, p_place), resolved
