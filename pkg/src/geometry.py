"""Convex polytopes and the geometric world shared by the oracle, perception and visibility."""

import logging
from dataclasses import dataclass, replace
from itertools import product
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import ConvexHull, HalfspaceIntersection, QhullError

logger = logging.getLogger(__name__)

# Degenerate point sets are padded to boxes of this edge length (m).
DEGENERATE_PAD = 0.01


@dataclass(frozen=True, eq=False)
class ConvexPolytope:
    """Bounded convex polytope in both representations.

    Halfspaces are normals · x <= offsets with unit normals. Triangles are the
    hull facets, used for exact outside distances.
    """

    vertices: np.ndarray  # (V, 3)
    normals: np.ndarray  # (K, 3)
    offsets: np.ndarray  # (K,)
    triangles: np.ndarray  # (F, 3, 3)

    @classmethod
    def from_points(cls, points: np.ndarray, pad: float = DEGENERATE_PAD) -> "ConvexPolytope":
        """Convex hull of a point set; degenerate sets are padded to small boxes."""
        points = np.asarray(points, dtype=float).reshape(-1, 3)
        try:
            hull = ConvexHull(points)
        except (QhullError, ValueError):
            corners = np.array(list(product((-0.5, 0.5), repeat=3))) * pad
            padded = (points[:, None, :] + corners[None, :, :]).reshape(-1, 3)
            logger.debug(f"Padding degenerate cluster of {len(points)} points")
            hull = ConvexHull(padded)
        return cls._from_hull(hull)

    @classmethod
    def _from_hull(cls, hull: ConvexHull) -> "ConvexPolytope":
        normals = hull.equations[:, :3]
        offsets = -hull.equations[:, 3]
        # qhull may emit coplanar facets with identical planes; keep one
        rounded = np.round(np.hstack([normals, offsets[:, None]]), 12)
        _, keep = np.unique(rounded, axis=0, return_index=True)
        keep = np.sort(keep)
        return cls(
            vertices=hull.points[hull.vertices],
            normals=normals[keep],
            offsets=offsets[keep],
            triangles=hull.points[hull.simplices],
        )

    @classmethod
    def box(cls, center: Sequence[float], size: Sequence[float]) -> "ConvexPolytope":
        center = np.asarray(center, dtype=float)
        half = 0.5 * np.asarray(size, dtype=float)
        corners = np.array(list(product((-1.0, 1.0), repeat=3))) * half + center
        return cls.from_points(corners)

    @classmethod
    def from_halfspaces(
        cls, normals: np.ndarray, offsets: np.ndarray, interior: np.ndarray
    ) -> Optional["ConvexPolytope"]:
        """Intersection of halfspaces; None when empty or flat."""
        stacked = np.hstack([normals, -np.asarray(offsets)[:, None]])
        try:
            vertices = HalfspaceIntersection(stacked, np.asarray(interior, dtype=float)).intersections
            return cls._from_hull(ConvexHull(vertices))
        except (QhullError, ValueError):
            return None

    @property
    def centroid(self) -> np.ndarray:
        return self.vertices.mean(axis=0)

    def contains(self, points: np.ndarray, tol: float = 1e-9) -> np.ndarray:
        points = np.atleast_2d(points)
        return np.all(points @ self.normals.T <= self.offsets + tol, axis=1)

    def distance(self, points: np.ndarray) -> np.ndarray:
        """Signed Euclidean distance: negative inside (depth to the nearest face)."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        plane = np.max(points @ self.normals.T - self.offsets, axis=1)
        out = plane.copy()
        outside = plane > 0
        if np.any(outside):
            out[outside] = _points_to_triangles(points[outside], self.triangles)
        return out

    def translated(self, delta: Sequence[float]) -> "ConvexPolytope":
        delta = np.asarray(delta, dtype=float)
        return ConvexPolytope(
            vertices=self.vertices + delta,
            normals=self.normals,
            offsets=self.offsets + self.normals @ delta,
            triangles=self.triangles + delta,
        )

    def clipped(self, normals: np.ndarray, offsets: np.ndarray) -> Optional["ConvexPolytope"]:
        """Intersection with extra halfspaces normals · x <= offsets; None when (nearly) empty."""
        all_normals = np.vstack([self.normals, normals])
        all_offsets = np.concatenate([self.offsets, offsets])
        norms = np.linalg.norm(all_normals, axis=1)
        # Chebyshev centre: deepest interior point
        result = linprog(
            c=np.array([0.0, 0.0, 0.0, -1.0]),
            A_ub=np.hstack([all_normals, norms[:, None]]),
            b_ub=all_offsets,
            bounds=[(None, None)] * 3 + [(0.0, None)],
            method="highs",
        )
        if not result.success or result.x[3] <= 1e-9:
            return None
        return ConvexPolytope.from_halfspaces(all_normals, all_offsets, result.x[:3])

    def ray_interval(self, origins: np.ndarray, directions: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Entry and exit parameters t of rays o + t·d (entry > exit means a miss)."""
        origins = np.atleast_2d(origins)
        directions = np.atleast_2d(directions)
        slack = self.offsets - origins @ self.normals.T  # (R, K)
        rate = directions @ self.normals.T
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = slack / rate
        t_enter = np.max(np.where(rate < 0, ratio, -np.inf), axis=1)
        t_exit = np.min(np.where(rate > 0, ratio, np.inf), axis=1)
        parallel_out = np.any((np.abs(rate) <= 1e-15) & (slack < 0), axis=1)
        t_enter[parallel_out] = np.inf
        return t_enter, t_exit

    def segment_intersects(self, start: np.ndarray, end: np.ndarray) -> np.ndarray:
        """Does the segment start -> end pass through the polytope (per row)."""
        start = np.atleast_2d(start)
        end = np.atleast_2d(end)
        t_enter, t_exit = self.ray_interval(start, end - start)
        lo = np.maximum(t_enter, 0.0)
        hi = np.minimum(t_exit, 1.0)
        return lo <= hi


def _points_to_triangles(points: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    """Minimum distance from each point to a set of triangles (closest-feature regions)."""
    p = points[:, None, :]
    a, b, c = (triangles[None, :, i, :] for i in range(3))
    ab, ac, ap = b - a, c - a, p - a
    d1 = np.sum(ab * ap, axis=-1)
    d2 = np.sum(ac * ap, axis=-1)
    bp = p - b
    d3 = np.sum(ab * bp, axis=-1)
    d4 = np.sum(ac * bp, axis=-1)
    cp = p - c
    d5 = np.sum(ab * cp, axis=-1)
    d6 = np.sum(ac * cp, axis=-1)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    with np.errstate(divide="ignore", invalid="ignore"):
        denom = va + vb + vc
        v_face = vb / denom
        w_face = vc / denom
        closest = a + ab * v_face[..., None] + ac * w_face[..., None]

        # edge bc
        w_bc = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        on_bc = (va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0)
        closest = np.where(on_bc[..., None], b + (c - b) * w_bc[..., None], closest)
        # edge ac
        w_ac = d2 / (d2 - d6)
        on_ac = (vb <= 0) & (d2 >= 0) & (d6 <= 0)
        closest = np.where(on_ac[..., None], a + ac * w_ac[..., None], closest)
        # edge ab
        v_ab = d1 / (d1 - d3)
        on_ab = (vc <= 0) & (d1 >= 0) & (d3 <= 0)
        closest = np.where(on_ab[..., None], a + ab * v_ab[..., None], closest)
    # vertices
    closest = np.where(((d6 >= 0) & (d5 <= d6))[..., None], c, closest)
    closest = np.where(((d3 >= 0) & (d4 <= d3))[..., None], b, closest)
    closest = np.where(((d1 <= 0) & (d2 <= 0))[..., None], a, closest)
    return np.min(np.linalg.norm(p - closest, axis=-1), axis=1)


@dataclass(frozen=True, eq=False)
class Obstacle:
    polytope: ConvexPolytope
    category: int = 0
    clearance: float = 0.0  # safety margin added by the collision oracle (m)
    name: str = ""


@dataclass(frozen=True, eq=False)
class GeometricWorld:
    """Convex obstacles with category labels."""

    obstacles: tuple = ()
    categories: int = 1

    def with_obstacle(self, obstacle: Obstacle) -> "GeometricWorld":
        return replace(self, obstacles=self.obstacles + (obstacle,))

    def without(self, name: str) -> "GeometricWorld":
        return replace(self, obstacles=tuple(o for o in self.obstacles if o.name != name))

    def find(self, name: str) -> Optional[Obstacle]:
        return next((o for o in self.obstacles if o.name == name), None)

    def raycast(self, origin: np.ndarray, directions: np.ndarray, max_range: float) -> np.ndarray:
        """First hit distance along each unit direction (inf for a miss)."""
        directions = np.atleast_2d(directions)
        origins = np.broadcast_to(origin, directions.shape)
        best = np.full(len(directions), np.inf)
        for obstacle in self.obstacles:
            t_enter, t_exit = obstacle.polytope.ray_interval(origins, directions)
            hit = (t_enter <= t_exit) & (t_enter >= 0) & (t_enter <= max_range)
            best = np.where(hit & (t_enter < best), t_enter, best)
        return best

    def segment_blocked(self, start: np.ndarray, end: np.ndarray) -> bool:
        return any(bool(o.polytope.segment_intersects(start, end)[0]) for o in self.obstacles)

    def min_distance(self, points: np.ndarray, radii: Optional[np.ndarray] = None) -> float:
        """Smallest surface-to-obstacle distance for spheres (points when radii is None)."""
        points = np.atleast_2d(points)
        radii = np.zeros(len(points)) if radii is None else np.asarray(radii)
        if not self.obstacles:
            return float("inf")
        return float(min(np.min(o.polytope.distance(points) - radii) for o in self.obstacles))

