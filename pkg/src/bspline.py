"""Clamped B-splines over normalised phase s in [0, 1] and their time scaling."""

import logging
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import BSpline

from .errors import DimensionError, PhaseRangeError

logger = logging.getLogger(__name__)

DEFAULT_DEGREE = 3
DEFAULT_CONTROL_POINTS = 10
DEFAULT_COLLOCATION_POINTS = 20


@dataclass(frozen=True, eq=False)
class KnotVector:
    """Clamped knot vector with equidistant interior knots on [0, 1]."""

    degree: int
    knots: np.ndarray

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float)
        n = self.degree
        if n < 0:
            raise DimensionError("Degree must be non-negative")
        if np.any(np.diff(knots) < 0):
            raise DimensionError("Knots must be nondecreasing")
        if not (np.all(knots[: n + 1] == 0.0) and np.all(knots[-(n + 1):] == 1.0)):
            raise DimensionError("Knot vector must be clamped on [0, 1]")
        object.__setattr__(self, "knots", knots)

    @classmethod
    def clamped_uniform(cls, degree: int, control_count: int) -> "KnotVector":
        if control_count < degree + 1:
            raise DimensionError(f"Need at least {degree + 1} control points, got {control_count}")
        interior = np.linspace(0.0, 1.0, control_count - degree + 1)[1:-1]
        return cls(degree, np.concatenate([np.zeros(degree + 1), interior, np.ones(degree + 1)]))

    @property
    def control_count(self) -> int:
        return len(self.knots) - self.degree - 1

    def interior(self) -> np.ndarray:
        return self.knots[self.degree + 1:-(self.degree + 1)]


@dataclass(frozen=True, eq=False)
class BSplineCurve:
    degree: int
    control_points: np.ndarray  # (M, d)
    knot_vector: KnotVector

    def __post_init__(self):
        points = np.asarray(self.control_points, dtype=float)
        if points.ndim == 1:
            points = points[:, None]
        if points.shape[0] < self.degree + 1:
            raise DimensionError(f"Degree {self.degree} needs at least {self.degree + 1} control points")
        if len(self.knot_vector.knots) != points.shape[0] + self.degree + 1:
            raise DimensionError("Knot count must equal M + n + 1")
        object.__setattr__(self, "control_points", points)

    @classmethod
    def clamped(cls, control_points: np.ndarray, degree: int = DEFAULT_DEGREE) -> "BSplineCurve":
        points = np.asarray(control_points, dtype=float)
        return cls(degree, points, KnotVector.clamped_uniform(degree, len(points)))

    @property
    def dim(self) -> int:
        return self.control_points.shape[1]

    def _scipy(self) -> BSpline:
        return BSpline(self.knot_vector.knots, self.control_points, self.degree, extrapolate=False)


@dataclass(frozen=True, eq=False)
class PhaseTrajectory:
    """Curve over phase s = t / T with duration T."""

    curve: BSplineCurve
    duration: float

    def __post_init__(self):
        if not self.duration > 0:
            raise PhaseRangeError(f"Duration must be positive, got {self.duration}")


def _check_phase(s) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    if np.any(s < 0.0) or np.any(s > 1.0) or np.any(~np.isfinite(s)):
        raise PhaseRangeError(f"Phase outside [0, 1]: {s}")
    return s


def evaluate(curve: BSplineCurve, s) -> np.ndarray:
    """z(s) = Σ c_i B_i^n(s); scalar s gives a d-vector, an array gives (len(s), d)."""
    s = _check_phase(s)
    return curve._scipy()(s)


def derivative_matrix(knot_vector: KnotVector) -> np.ndarray:
    """(M-1, M) map from control points to the derivative curve's control points."""
    n = knot_vector.degree
    if n < 1:
        raise DimensionError("Degree-0 curves have no derivative curve")
    t = knot_vector.knots
    m = knot_vector.control_count
    out = np.zeros((m - 1, m))
    for i in range(m - 1):
        span = t[i + n + 1] - t[i + 1]
        if span > 0:
            out[i, i] = -n / span
            out[i, i + 1] = n / span
    return out


def derivative_curve(curve: BSplineCurve) -> BSplineCurve:
    """Degree n-1 curve with d/ds evaluate(curve, s) = evaluate(derivative, s)."""
    if curve.degree < 1:
        raise DimensionError("Degree-0 curves have no derivative curve")
    points = derivative_matrix(curve.knot_vector) @ curve.control_points
    knots = KnotVector(curve.degree - 1, curve.knot_vector.knots[1:-1])
    return BSplineCurve(curve.degree - 1, points, knots)


def uniform_phases(count: int) -> np.ndarray:
    """Collocation phases s_i = i / N for i = 0..N."""
    return np.linspace(0.0, 1.0, count + 1)


def basis_matrix(knot_vector: KnotVector, phases: np.ndarray) -> np.ndarray:
    """(len(phases), M) dense basis matrix."""
    return BSpline.design_matrix(phases, knot_vector.knots, knot_vector.degree).toarray()


def collocation_matrices(
    knot_vector: KnotVector, phases
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Linear maps control points -> sampled position, phase velocity, phase acceleration."""
    phases = _check_phase(phases)
    if phases.size == 0:
        raise PhaseRangeError("No collocation phases given")
    if np.any(np.diff(phases) < 0):
        raise PhaseRangeError("Collocation phases must be sorted")
    n = knot_vector.degree
    m = knot_vector.control_count
    position = basis_matrix(knot_vector, phases)
    velocity = np.zeros_like(position)
    acceleration = np.zeros_like(position)
    if n >= 1:
        d1 = derivative_matrix(knot_vector)
        kv1 = KnotVector(n - 1, knot_vector.knots[1:-1])
        velocity = basis_matrix(kv1, phases) @ d1
        if n >= 2:
            d2 = derivative_matrix(kv1) @ d1
            kv2 = KnotVector(n - 2, knot_vector.knots[2:-2])
            acceleration = basis_matrix(kv2, phases) @ d2
    logger.debug(f"Collocation matrices for {len(phases)} phases, {m} control points")
    return position, velocity, acceleration


def time_scaled_samples(traj: PhaseTrajectory, s) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(z, ż, z̈) at phase s: ż = z'(s) / T, z̈ = z''(s) / T²."""
    if not traj.duration > 0:
        raise PhaseRangeError(f"Duration must be positive, got {traj.duration}")
    s = _check_phase(s)
    z = evaluate(traj.curve, s)
    first = derivative_curve(traj.curve)
    velocity = evaluate(first, s) / traj.duration
    if first.degree >= 1:
        acceleration = evaluate(derivative_curve(first), s) / traj.duration**2
    else:
        acceleration = np.zeros_like(z)
    return z, velocity, acceleration
