"""Synthetic camera pipeline: capture, robot self-filtering, clustering and occlusion bookkeeping.

One frame runs filter -> cluster -> occlusion polytopes per camera, fuses the
cameras, integrates the result with the previous frame, and finally projects
the robot's own spheres as occlusion cones.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from itertools import product
from typing import Optional, Sequence

import numpy as np
from sklearn.cluster import DBSCAN

from .errors import CameraInsideSphereError, DimensionError
from .geometry import ConvexPolytope, GeometricWorld
from .kinematics import Pose, RobotModel, link_transforms, point_positions

logger = logging.getLogger(__name__)

CLUSTER_EPS = 0.05
CLUSTER_MIN_PTS = 8
OCCLUSION_EXTEND = 1.0
SPHERE_INFLATION = 1.1
REASSOCIATE_DISTANCE = 0.1
# Grid resolution per axis when sampling a polytope for integration.
SAMPLE_RESOLUTION = 7


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray  # (N, 3) world frame
    source: str = ""
    timestamp: float = 0.0

    def __post_init__(self):
        points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(points)):
            raise DimensionError(f"Point cloud from {self.source!r} has non-finite coordinates")
        object.__setattr__(self, "points", points)

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True, eq=False)
class CameraModel:
    """Pinhole depth camera; z is the optical axis, x right, y down."""

    pose: Pose
    fov_h: float
    fov_v: float
    resolution: tuple = (48, 64)  # rows, cols
    max_range: float = 4.0
    name: str = "camera"

    def __post_init__(self):
        for value in (self.fov_h, self.fov_v):
            if not 0.0 < value < np.pi:
                raise DimensionError(f"{self.name}: field of view {value} outside (0, pi)")
        if self.resolution[0] < 1 or self.resolution[1] < 1:
            raise DimensionError(f"{self.name}: resolution must be at least 1x1")
        if self.max_range <= 0:
            raise DimensionError(f"{self.name}: max_range must be positive")

    @property
    def origin(self) -> np.ndarray:
        return self.pose.position

    @property
    def rotation(self) -> np.ndarray:
        return self.pose.matrix()[:3, :3]

    @property
    def optical_axis(self) -> np.ndarray:
        return self.rotation[:, 2]

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        return (np.atleast_2d(points) - self.origin) @ self.rotation

    def ray_directions(self) -> np.ndarray:
        """Unit world directions through every pixel centre, row-major."""
        rows, cols = self.resolution
        u = ((np.arange(cols) + 0.5) / cols * 2.0 - 1.0) * np.tan(self.fov_h / 2)
        v = ((np.arange(rows) + 0.5) / rows * 2.0 - 1.0) * np.tan(self.fov_v / 2)
        vv, uu = np.meshgrid(v, u, indexing="ij")
        local = np.stack([uu.ravel(), vv.ravel(), np.ones(uu.size)], axis=1)
        local /= np.linalg.norm(local, axis=1, keepdims=True)
        return local @ self.rotation.T

    def in_frustum(self, points: np.ndarray) -> np.ndarray:
        local = self.to_camera(points)
        z = local[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            inside = (
                (z > 0)
                & (np.abs(local[:, 0]) <= z * np.tan(self.fov_h / 2) + 1e-12)
                & (np.abs(local[:, 1]) <= z * np.tan(self.fov_v / 2) + 1e-12)
            )
        return inside & (np.linalg.norm(local, axis=1) <= self.max_range)

    def frustum_halfspaces(self) -> tuple[np.ndarray, np.ndarray]:
        """World halfspaces (normals, offsets) of the four side planes and the far plane."""
        th, tv = np.tan(self.fov_h / 2), np.tan(self.fov_v / 2)
        local = np.array(
            [[1.0, 0.0, -th], [-1.0, 0.0, -th], [0.0, 1.0, -tv], [0.0, -1.0, -tv], [0.0, 0.0, 1.0]]
        )
        local /= np.linalg.norm(local, axis=1, keepdims=True)
        normals = local @ self.rotation.T
        local_offsets = np.array([0.0, 0.0, 0.0, 0.0, self.max_range])
        return normals, local_offsets + normals @ self.origin


def eye_in_hand_camera(model: RobotModel, q: np.ndarray, **kwargs) -> CameraModel:
    """Camera posed at end effector · camera mount for configuration q."""
    if model.camera_mount is None:
        raise DimensionError(f"{model.name} has no camera mount")
    _, ee = link_transforms(model, np.atleast_2d(q))
    return CameraModel(pose=Pose.from_matrix(ee[0] @ model.camera_mount), name="eye_in_hand", **kwargs)


@dataclass(frozen=True, eq=False)
class PosedSpheres:
    centers: np.ndarray  # (K, 3)
    radii: np.ndarray  # (K,)

    @classmethod
    def empty(cls) -> "PosedSpheres":
        return cls(np.zeros((0, 3)), np.zeros(0))

    @classmethod
    def of(cls, model: RobotModel, q: np.ndarray) -> "PosedSpheres":
        spheres = list(model.collision_spheres)
        if not spheres:
            return cls.empty()
        centers = point_positions(model, np.atleast_2d(q), spheres)[0]
        return cls(centers, np.array([s.radius for s in spheres]))

    def merged(self, other: "PosedSpheres") -> "PosedSpheres":
        return PosedSpheres(np.vstack([self.centers, other.centers]), np.concatenate([self.radii, other.radii]))


def _sphere_hits(origin: np.ndarray, directions: np.ndarray, spheres: PosedSpheres) -> np.ndarray:
    """First positive ray parameter hitting any sphere (inf for a miss)."""
    best = np.full(len(directions), np.inf)
    for center, radius in zip(spheres.centers, spheres.radii):
        offset = origin - center
        b = directions @ offset
        c = offset @ offset - radius**2
        disc = b**2 - c
        hit = disc >= 0
        root = np.sqrt(np.where(hit, disc, 0.0))
        t = np.where(-b - root > 0, -b - root, -b + root)
        t = np.where(hit & (t > 0), t, np.inf)
        best = np.minimum(best, t)
    return best


def synthetic_depth_capture(
    world: GeometricWorld,
    camera: CameraModel,
    robot_spheres: Optional[PosedSpheres] = None,
    timestamp: float = 0.0,
    noise: float = 0.0,
    rng: Optional[np.random.Generator] = None,
) -> PointCloud:
    """One ray per pixel; a point at the first obstacle (or robot sphere) surface within range."""
    directions = camera.ray_directions()
    depth = world.raycast(camera.origin, directions, camera.max_range)
    if robot_spheres is not None and len(robot_spheres.radii):
        depth = np.minimum(depth, _sphere_hits(camera.origin, directions, robot_spheres))
    seen = depth <= camera.max_range
    points = camera.origin + directions[seen] * depth[seen, None]
    if noise > 0:
        points = points + (rng or np.random.default_rng()).normal(0.0, noise, points.shape)
    return PointCloud(points, camera.name, timestamp)


def filter_robot_points(
    cloud: PointCloud, spheres: PosedSpheres, inflation: float = SPHERE_INFLATION
) -> PointCloud:
    """Keep the points farther than radius x inflation from every sphere centre."""
    if len(cloud) == 0 or len(spheres.radii) == 0:
        return cloud
    dist = np.linalg.norm(cloud.points[:, None, :] - spheres.centers[None, :, :], axis=2)
    keep = np.all(dist > spheres.radii * inflation, axis=1)
    return PointCloud(cloud.points[keep], cloud.source, cloud.timestamp)


def cluster_to_hulls(
    cloud: PointCloud, eps: float = CLUSTER_EPS, min_pts: int = CLUSTER_MIN_PTS
) -> list[ConvexPolytope]:
    """Density-based clusters of the cloud, one convex hull each; noise is discarded."""
    if eps <= 0 or min_pts < 1:
        raise DimensionError(f"Invalid clustering parameters eps={eps}, min_pts={min_pts}")
    if len(cloud) < min_pts:
        return []
    labels = DBSCAN(eps=eps, min_samples=min_pts).fit(cloud.points).labels_
    hulls = [ConvexPolytope.from_points(cloud.points[labels == k]) for k in sorted(set(labels) - {-1})]
    logger.debug(f"{cloud.source}: {len(hulls)} clusters from {len(cloud)} points")
    return hulls


def occlusion_polytope(
    hull: ConvexPolytope, camera: CameraModel, extend: float = OCCLUSION_EXTEND
) -> Optional[ConvexPolytope]:
    """Shadow of a hull: its vertices plus their radial projections `extend` metres farther.

    Clipped to the camera frustum; None when the hull is behind the camera or
    outside the view.
    """
    local = camera.to_camera(hull.vertices)
    front = local[:, 2] > 0
    if not np.any(front):
        return None
    rays = hull.vertices[front] - camera.origin
    lengths = np.linalg.norm(rays, axis=1, keepdims=True)
    projected = camera.origin + rays * (1.0 + extend / lengths)
    shadow = ConvexPolytope.from_points(np.vstack([hull.vertices[front], projected]))
    normals, offsets = camera.frustum_halfspaces()
    return shadow.clipped(normals, offsets)


@dataclass(frozen=True)
class OcclusionCone:
    apex: np.ndarray
    axis: np.ndarray  # unit, apex -> sphere centre
    half_angle: float
    depth: float  # tangent distance; points nearer the apex are in front of the sphere

    def contains(self, points: np.ndarray) -> np.ndarray:
        rel = np.atleast_2d(points) - self.apex
        dist = np.linalg.norm(rel, axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            cos = np.where(dist > 0, rel @ self.axis / dist, 1.0)
        return (cos >= np.cos(self.half_angle) - 1e-12) & (dist >= self.depth)


def dynamic_occlusion_cones(spheres: PosedSpheres, camera: CameraModel) -> list[OcclusionCone]:
    """Cone per robot sphere with half aperture asin(r / d) from the camera origin."""
    cones = []
    for center, radius in zip(spheres.centers, spheres.radii):
        offset = center - camera.origin
        d = float(np.linalg.norm(offset))
        if d <= radius:
            raise CameraInsideSphereError(f"{camera.name} lies inside a robot sphere (d={d:.3f}, r={radius:.3f})")
        cones.append(
            OcclusionCone(camera.origin.copy(), offset / d, float(np.arcsin(radius / d)), float(np.sqrt(d**2 - radius**2)))
        )
    return cones


@dataclass(frozen=True, eq=False)
class OcclusionModel:
    """Obstacle hulls and occlusion polytopes known at one frame."""

    obstacle_hulls: tuple = ()
    occlusion_polytopes: tuple = ()
    cameras: tuple = ()  # cameras whose observations produced this model
    cones: tuple = ()  # robot occlusion cones of the latest frame
    history: tuple = ()  # timestamps of the integrated frames

    @property
    def is_empty(self) -> bool:
        return not self.obstacle_hulls and not self.occlusion_polytopes

    def in_view(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(points)
        seen = np.zeros(len(points), dtype=bool)
        for camera in self.cameras:
            seen |= camera.in_frustum(points)
        return seen

    def occluded(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(points)
        out = np.zeros(len(points), dtype=bool)
        for polytope in self.occlusion_polytopes:
            out |= polytope.contains(points)
        return out

    def occupied(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(points)
        out = np.zeros(len(points), dtype=bool)
        for hull in self.obstacle_hulls:
            out |= hull.contains(points)
        return out

    def observed_free(self, points: np.ndarray) -> np.ndarray:
        return self.in_view(points) & ~self.occluded(points) & ~self.occupied(points)

    def sight_blocked(self, start: np.ndarray, end: np.ndarray) -> bool:
        return any(bool(h.segment_intersects(start, end)[0]) for h in self.obstacle_hulls)


def _sample_polytope(polytope: ConvexPolytope) -> np.ndarray:
    lo, hi = polytope.vertices.min(axis=0), polytope.vertices.max(axis=0)
    axes = [np.linspace(a, b, SAMPLE_RESOLUTION) for a, b in zip(lo, hi)]
    grid = np.array(list(product(*axes)))
    return np.vstack([polytope.vertices, grid[polytope.contains(grid)]])


def _trim(polytope: ConvexPolytope, remove: np.ndarray, points: np.ndarray) -> Optional[ConvexPolytope]:
    if not remove.any():
        return polytope
    remaining = points[~remove]
    if len(remaining) < 4:
        return None
    return ConvexPolytope.from_points(remaining) if _spans_volume(remaining) else None


def _spans_volume(points: np.ndarray) -> bool:
    return np.linalg.matrix_rank(points - points.mean(axis=0), tol=1e-9) == 3


def _near(centroid: np.ndarray, hulls: Sequence[ConvexPolytope], distance: float) -> bool:
    return any(np.linalg.norm(h.centroid - centroid) <= distance for h in hulls)


def integrate_occlusions(
    current: OcclusionModel, history: OcclusionModel, reassociate_distance: float = REASSOCIATE_DISTANCE
) -> OcclusionModel:
    """Carry forward what the current frame could not observe.

    Historical occlusions lose every sample point inside a current camera
    frustum (it is free, covered by a current occlusion, or occupied by a
    current hull) and are re-hulled from what is left. Historical hulls are
    replaced by a current hull within `reassociate_distance`, kept when out of
    view, and dropped otherwise.
    """
    if history.is_empty:
        return current
    kept_occlusions = list(current.occlusion_polytopes)
    for polytope in history.occlusion_polytopes:
        points = _sample_polytope(polytope)
        trimmed = _trim(polytope, current.in_view(points), points)
        if trimmed is not None:
            kept_occlusions.append(trimmed)
    kept_hulls = list(current.obstacle_hulls)
    for hull in history.obstacle_hulls:
        if _near(hull.centroid, current.obstacle_hulls, reassociate_distance):
            continue
        if not current.in_view(hull.centroid[None, :])[0]:
            kept_hulls.append(hull)
    logger.debug(
        f"Integrated occlusions: {len(history.occlusion_polytopes)} historical -> "
        f"{len(kept_occlusions) - len(current.occlusion_polytopes)} carried"
    )
    return OcclusionModel(
        obstacle_hulls=tuple(kept_hulls),
        occlusion_polytopes=tuple(kept_occlusions),
        cameras=current.cameras,
        cones=current.cones,
        history=history.history + current.history,
    )


def fuse_cameras(models: Sequence[OcclusionModel], reassociate_distance: float = REASSOCIATE_DISTANCE) -> OcclusionModel:
    """Merge simultaneous per-camera models: free space is the union of what any camera saw free."""
    models = list(models)
    if not models:
        return OcclusionModel()
    occlusions = []
    hulls: list[ConvexPolytope] = []
    for i, model in enumerate(models):
        others = [m for j, m in enumerate(models) if j != i]
        for polytope in model.occlusion_polytopes:
            points = _sample_polytope(polytope)
            remove = np.zeros(len(points), dtype=bool)
            for other in others:
                remove |= other.observed_free(points)
            trimmed = _trim(polytope, remove, points)
            if trimmed is not None:
                occlusions.append(trimmed)
        for hull in model.obstacle_hulls:
            if not _near(hull.centroid, hulls, reassociate_distance):
                hulls.append(hull)
    return OcclusionModel(
        obstacle_hulls=tuple(hulls),
        occlusion_polytopes=tuple(occlusions),
        cameras=tuple(c for m in models for c in m.cameras),
        cones=tuple(c for m in models for c in m.cones),
        history=tuple(sorted(set(t for m in models for t in m.history))),
    )


@dataclass
class PerceptionSettings:
    cluster_eps: float = CLUSTER_EPS
    cluster_min_pts: int = CLUSTER_MIN_PTS
    occlusion_extend: float = OCCLUSION_EXTEND
    sphere_inflation: float = SPHERE_INFLATION
    reassociate_distance: float = REASSOCIATE_DISTANCE
    noise: float = 0.0
    workers: int = 1
    seed: int = 0


def camera_model(
    world: GeometricWorld,
    camera: CameraModel,
    spheres: PosedSpheres,
    settings: PerceptionSettings,
    timestamp: float = 0.0,
) -> OcclusionModel:
    """Single-camera pipeline: capture, filter, cluster, shadow, robot cones."""
    rng = np.random.default_rng(settings.seed)
    cloud = synthetic_depth_capture(world, camera, spheres, timestamp, settings.noise, rng)
    cloud = filter_robot_points(cloud, spheres, settings.sphere_inflation)
    hulls = cluster_to_hulls(cloud, settings.cluster_eps, settings.cluster_min_pts)
    shadows = [occlusion_polytope(h, camera, settings.occlusion_extend) for h in hulls]
    # spheres around the camera's own mount cannot cast a cone
    outside = np.linalg.norm(spheres.centers - camera.origin, axis=1) > spheres.radii + 1e-6
    cones = dynamic_occlusion_cones(PosedSpheres(spheres.centers[outside], spheres.radii[outside]), camera)
    return OcclusionModel(
        obstacle_hulls=tuple(hulls),
        occlusion_polytopes=tuple(s for s in shadows if s is not None),
        cameras=(camera,),
        cones=tuple(cones),
        history=(timestamp,),
    )


def perceive_frame(
    world: GeometricWorld,
    cameras: Sequence[CameraModel],
    spheres: PosedSpheres,
    history: Optional[OcclusionModel] = None,
    settings: Optional[PerceptionSettings] = None,
    timestamp: float = 0.0,
) -> OcclusionModel:
    """Run every camera, fuse them, and integrate with the previous frame."""
    settings = settings or PerceptionSettings()
    with ThreadPoolExecutor(max_workers=max(1, settings.workers)) as pool:
        per_camera = list(pool.map(lambda cam: camera_model(world, cam, spheres, settings, timestamp), cameras))
    fused = fuse_cameras(per_camera, settings.reassociate_distance)
    model = integrate_occlusions(fused, history or OcclusionModel(), settings.reassociate_distance)
    logger.debug(
        f"Frame t={timestamp:.2f}: {len(model.obstacle_hulls)} hulls, {len(model.occlusion_polytopes)} occlusions"
    )
    return model
