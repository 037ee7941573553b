"""Kernel-perceptron collision proxy per collision group, plus the geometric oracle.

k_FK averages a polyharmonic kernel over forward-kinematics control points.
A support set scores a configuration by κ(q, S) · W + b with the similarity
κ = exp(-k_FK / σ), which is 1 for identical poses. Positive scores predict
collision. Training is a perceptron: each step corrects the worst margin
violator with a single weight change, reusing a nearby support vector of the
same label before creating a new one. The bias is nonzero only for categories
whose training labels are all equal.
"""

import logging
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy.spatial.distance import cdist

from .errors import DimensionError, EmptySupportSetError, SamplerExhaustedError
from .geometry import GeometricWorld
from .kinematics import RobotModel, point_jacobians, point_positions

logger = logging.getLogger(__name__)

DEFAULT_KERNEL_ORDER = 1
SV_BUDGET_STATIC = 200
SV_BUDGET_DYNAMIC = 800
KERNEL_SIGMA = 0.2  # m
GRAM_SIGMA = 2.0  # m
THRESHOLD_FREE = 0.95
THRESHOLD_COLLISION = 0.99
# A same-label support vector at least this similar to a violator takes the update.
REUSE_SIMILARITY = 0.9
UPDATES_PER_SAMPLE = 10
# Training margins below this count as violations; above the planner collision margin.
MIN_MARGIN = 0.1


# --- kernels -----------------------------------------------------------------


def _polyharmonic(r: np.ndarray, k: int) -> np.ndarray:
    if k < 1:
        raise DimensionError(f"Polyharmonic order must be >= 1, got {k}")
    r = np.asarray(r, dtype=float)
    if k % 2:
        return r**k
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(r > 0, r**k * np.log(np.where(r > 0, r, 1.0)), 0.0)


def _polyharmonic_slope(r: np.ndarray, k: int) -> np.ndarray:
    """d/dr of the polyharmonic kernel, zero at r = 0."""
    r = np.asarray(r, dtype=float)
    safe = np.where(r > 0, r, 1.0)
    if k % 2:
        slope = k * safe ** (k - 1)
    else:
        slope = k * safe ** (k - 1) * np.log(safe) + safe ** (k - 1)
    return np.where(r > 0, slope, 0.0)


def polyharmonic_kernel(x: np.ndarray, x2: np.ndarray, k: int = DEFAULT_KERNEL_ORDER) -> float:
    """r^k for odd k, r^k ln r for even k (0 at r = 0)."""
    r = np.linalg.norm(np.asarray(x, dtype=float) - np.asarray(x2, dtype=float))
    return float(_polyharmonic(r, k))


def _control_points(model: RobotModel, group: Optional[int]) -> list:
    points = list(model.fk_control_points) if group is None else model.group_control_points(group)
    if not points:
        raise DimensionError(f"{model.name}: group {group} has no FK control points")
    return points


def _mean_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Mean control-point distance between (N, P, 3) and (M, P, 3) sets."""
    return np.mean([cdist(a[:, p], b[:, p]) for p in range(a.shape[1])], axis=0)


def _fk_kernel_matrix(a: np.ndarray, b: np.ndarray, k: int) -> np.ndarray:
    return np.mean([_polyharmonic(cdist(a[:, p], b[:, p]), k) for p in range(a.shape[1])], axis=0)


def _similarity_matrix(a: np.ndarray, b: np.ndarray, k: int, sigma: float) -> np.ndarray:
    return np.exp(-_fk_kernel_matrix(a, b, k) / sigma)


def fk_kernel(
    model: RobotModel, group: Optional[int], q: np.ndarray, q2: np.ndarray, k: int = DEFAULT_KERNEL_ORDER
) -> float:
    """Mean polyharmonic kernel over the group's FK control points (group None = whole robot)."""
    points = _control_points(model, group)
    pa = point_positions(model, np.atleast_2d(q), points)
    pb = point_positions(model, np.atleast_2d(q2), points)
    return float(_fk_kernel_matrix(pa, pb, k)[0, 0])


def fk_similarity(
    model: RobotModel,
    group: Optional[int],
    q: np.ndarray,
    q2: np.ndarray,
    sigma: float = KERNEL_SIGMA,
    k: int = DEFAULT_KERNEL_ORDER,
) -> float:
    """Perceptron kernel exp(-k_FK / σ); 1 for identical poses."""
    return float(np.exp(-fk_kernel(model, group, q, q2, k) / sigma))


# --- data types --------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """Configurations X (N, D) with labels Y (N, c): +1 collision, -1 free."""

    X: np.ndarray
    Y: np.ndarray

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        Y = np.asarray(self.Y, dtype=float)
        if Y.ndim == 1:
            Y = Y[:, None]
        if X.shape[0] != Y.shape[0]:
            raise DimensionError(f"{X.shape[0]} configurations but {Y.shape[0]} label rows")
        if not np.all(np.isin(Y, (-1.0, 1.0))):
            raise DimensionError("Labels must be +1 or -1")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)

    def __len__(self) -> int:
        return self.X.shape[0]

    def split(self, fraction: float, rng: np.random.Generator) -> tuple["LabeledDataset", "LabeledDataset"]:
        order = rng.permutation(len(self))
        cut = int(round(fraction * len(self)))
        head, tail = order[:cut], order[cut:]
        return LabeledDataset(self.X[head], self.Y[head]), LabeledDataset(self.X[tail], self.Y[tail])


@dataclass(frozen=True, eq=False)
class SupportSet:
    """Trained proxy for one collision group (group None = whole robot)."""

    support: np.ndarray  # (M, D)
    weights: np.ndarray  # (M, c)
    bias: np.ndarray  # (c,)
    labels: np.ndarray  # (M, c) training labels of the support rows
    control_points: tuple
    group: Optional[int]
    kernel_order: int = DEFAULT_KERNEL_ORDER
    kernel_sigma: float = KERNEL_SIGMA
    sv_budget: int = SV_BUDGET_STATIC
    support_points: Optional[np.ndarray] = None  # (M, P, 3) cached FK positions
    violations: int = 0

    @classmethod
    def build(
        cls,
        model: RobotModel,
        group: Optional[int],
        support: np.ndarray,
        weights: np.ndarray,
        bias: np.ndarray,
        labels: np.ndarray,
        **kwargs,
    ) -> "SupportSet":
        support = np.asarray(support, dtype=float).reshape(-1, model.joint_count)
        bias = np.atleast_1d(np.asarray(bias, dtype=float))
        shape = (len(support), bias.size)
        points = tuple(_control_points(model, group))
        cached = point_positions(model, support, points) if len(support) else np.zeros((0, len(points), 3))
        return cls(
            support=support,
            weights=np.asarray(weights, dtype=float).reshape(shape),
            bias=bias,
            labels=np.asarray(labels, dtype=float).reshape(shape),
            control_points=points,
            group=group,
            support_points=cached,
            **kwargs,
        )

    @property
    def size(self) -> int:
        return self.support.shape[0]

    @property
    def categories(self) -> int:
        return self.bias.shape[0]


GroupScores = dict  # group id -> (c,) score array


def default_budget(
    model: RobotModel, group: Optional[int], static: int = SV_BUDGET_STATIC, dynamic: int = SV_BUDGET_DYNAMIC
) -> int:
    """Larger budget for the end-effector assembly group (and the whole-robot baseline)."""
    if group is None:
        return static * (len(model.groups) - 1) + dynamic
    last = model.joint_count - 1
    return dynamic if model.group_assignment[last] == group else static


# --- training ----------------------------------------------------------------


def _constant_bias(labels: np.ndarray) -> np.ndarray:
    """Per category: the shared label when all training labels agree, else 0."""
    if len(labels) == 0:
        return np.zeros(labels.shape[1])
    return np.where(np.all(labels == labels[0], axis=0), labels[0], 0.0)


class _Perceptron:
    """Kernel perceptron over a fixed sample pool; Gram columns are computed for support rows only."""

    def __init__(self, points: np.ndarray, labels: np.ndarray, k: int, sigma: float, budget: int):
        self.points = points
        self.labels = labels
        self.k = k
        self.sigma = sigma
        self.budget = budget
        self.weights = np.zeros_like(labels)
        self.hypothesis = np.zeros_like(labels)
        self.bias = _constant_bias(labels)
        self.members: list[int] = []
        self._slots: dict[int, int] = {}
        self.columns = np.zeros((len(points), min(budget, len(points))))

    def margins(self) -> np.ndarray:
        return self.labels * (self.hypothesis + self.bias)

    def _column_of(self, i: int) -> int:
        if i not in self._slots:
            slot = len(self.members)
            self.columns[:, slot] = _similarity_matrix(self.points, self.points[i : i + 1], self.k, self.sigma)[:, 0]
            self._slots[i] = slot
            self.members.append(i)
        return self._slots[i]

    def _target(self, i: int, c: int) -> Optional[int]:
        """Support row that takes the update for sample i, or None when the budget is spent."""
        if i in self._slots:
            return i
        if self.members:
            same = self.labels[self.members, c] == self.labels[i, c]
            similarity = np.where(same, self.columns[i, : len(self.members)], -np.inf)
            best = int(np.argmax(similarity))
            if similarity[best] >= REUSE_SIMILARITY:
                return self.members[best]
        return i if len(self.members) < self.budget else None

    def step(self, i: int, c: int, j: int) -> None:
        """Move weight (j, c) so sample i scores exactly its label."""
        col = self.columns[:, self._column_of(j)]
        delta = (self.labels[i, c] - self.hypothesis[i, c] - self.bias[c]) / col[i]
        self.weights[j, c] += delta
        self.hypothesis[:, c] += delta * col

    def run(self, limit: Optional[int] = None, max_updates: Optional[int] = None) -> int:
        """Correct the worst violator among the first `limit` samples until every margin reaches MIN_MARGIN.

        Returns the number of violations left when the update or support budget runs out.
        """
        limit = len(self.points) if limit is None else limit
        max_updates = max_updates or UPDATES_PER_SAMPLE * max(limit, 1)
        for _ in range(max_updates):
            margins = self.margins()[:limit]
            if margins.size == 0 or margins.min() >= MIN_MARGIN:
                return 0
            picked = self._pick(margins)
            if picked is None:
                break
            self.step(*picked)
        return int(np.count_nonzero(np.min(self.margins()[:limit], axis=1) < MIN_MARGIN))

    def _pick(self, margins: np.ndarray) -> Optional[tuple[int, int, int]]:
        i, c = np.unravel_index(np.argmin(margins), margins.shape)
        j = self._target(int(i), int(c))
        if j is not None:
            return int(i), int(c), j
        # support budget spent: take the worst violator an existing vector can fix
        flat = np.flatnonzero(margins.ravel() < MIN_MARGIN)
        for index in flat[np.argsort(margins.ravel()[flat], kind="stable")]:
            i, c = np.unravel_index(index, margins.shape)
            j = self._target(int(i), int(c))
            if j is not None:
                return int(i), int(c), j
        return None

    def support_rows(self) -> np.ndarray:
        return np.flatnonzero(np.any(self.weights != 0.0, axis=1))


def _support_from(
    fit: _Perceptron,
    X: np.ndarray,
    model: RobotModel,
    group: Optional[int],
    budget: int,
    violations: int,
) -> SupportSet:
    rows = fit.support_rows()
    return SupportSet.build(
        model,
        group,
        X[rows],
        fit.weights[rows],
        fit.bias,
        fit.labels[rows],
        kernel_order=fit.k,
        kernel_sigma=fit.sigma,
        sv_budget=budget,
        violations=violations,
    )


def train(
    dataset: LabeledDataset,
    model: RobotModel,
    group: Optional[int],
    kernel_order: int = DEFAULT_KERNEL_ORDER,
    sv_budget: Optional[int] = None,
    kernel_sigma: float = KERNEL_SIGMA,
    max_updates: Optional[int] = None,
) -> SupportSet:
    """Perceptron training until every margin Y ⊙ (KW + b) reaches MIN_MARGIN.

    Weights start at zero. Samples that never receive a weight are not kept.
    Running out of updates or support budget is logged and the remaining
    violation count is stored on the result.
    """
    if len(dataset) == 0:
        raise DimensionError("Cannot train on an empty dataset")
    budget = sv_budget or default_budget(model, group)
    points = point_positions(model, dataset.X, _control_points(model, group))
    fit = _Perceptron(points, dataset.Y, kernel_order, kernel_sigma, budget)
    violations = fit.run(max_updates=max_updates)
    support = _support_from(fit, dataset.X, model, group, budget, violations)
    if violations:
        logger.warning(f"{model.name} group {group}: {violations} margin violations left at budget {budget}")
    logger.info(f"{model.name} group {group}: trained {support.size} support vectors on {len(dataset)} samples")
    return support


# --- scoring -----------------------------------------------------------------


def _check_trained(support: SupportSet) -> None:
    if support.bias is None or support.bias.size == 0:
        raise EmptySupportSetError("Support set has not been trained")


def score_batch(support: SupportSet, model: RobotModel, Q: np.ndarray) -> np.ndarray:
    """Scores (N, c) for configurations Q (N, n)."""
    _check_trained(support)
    Q = np.atleast_2d(Q)
    if support.size == 0:
        return np.broadcast_to(support.bias, (Q.shape[0], support.categories)).copy()
    points = point_positions(model, Q, support.control_points)
    kernel = _similarity_matrix(points, support.support_points, support.kernel_order, support.kernel_sigma)
    return kernel @ support.weights + support.bias


def score(support: SupportSet, model: RobotModel, q: np.ndarray) -> np.ndarray:
    """κ(q, S) · W + b per category; positive predicts collision."""
    return score_batch(support, model, model.check_q(q)[None, :])[0]


def score_gradient(support: SupportSet, model: RobotModel, Q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Scores (N, c) and their joint gradients (N, c, n)."""
    _check_trained(support)
    Q = np.atleast_2d(Q)
    n = model.joint_count
    if support.size == 0:
        values = np.broadcast_to(support.bias, (Q.shape[0], support.categories)).copy()
        return values, np.zeros(values.shape + (n,))
    positions, jac = point_jacobians(model, Q, support.control_points)
    count = len(support.control_points)
    k_fk = np.zeros((Q.shape[0], support.size))
    slopes = []
    for p in range(count):
        diff = positions[:, p, None, :] - support.support_points[None, :, p, :]  # (N, M, 3)
        r = np.linalg.norm(diff, axis=2)
        k_fk += _polyharmonic(r, support.kernel_order) / count
        with np.errstate(divide="ignore", invalid="ignore"):
            unit = np.where(r[..., None] > 0, diff / r[..., None], 0.0)
        # d r / d q = unit · J_p
        dr_dq = np.einsum("nmi,nij->nmj", unit, jac[:, p])
        slopes.append((_polyharmonic_slope(r, support.kernel_order), dr_dq))
    kernel = np.exp(-k_fk / support.kernel_sigma)
    values = kernel @ support.weights + support.bias
    # d κ / d k_FK = -κ / σ
    outer = -kernel / (support.kernel_sigma * count)
    grads = np.zeros((Q.shape[0], support.categories, n))
    for slope, dr_dq in slopes:
        grads += np.einsum("nm,mc,nmj->ncj", outer * slope, support.weights, dr_dq)
    return values, grads


# --- pruning -----------------------------------------------------------------


def gram_prune(
    support: SupportSet,
    threshold_free: float = THRESHOLD_FREE,
    threshold_collision: float = THRESHOLD_COLLISION,
    sigma: float = GRAM_SIGMA,
) -> SupportSet:
    """Drop same-label support vectors whose normalised Gram similarity exceeds the class threshold.

    The earlier-indexed vector of a redundant pair is kept and takes over the
    weight of the dropped one.
    """
    if support.size < 2:
        return support
    gram = np.exp(-_mean_distances(support.support_points, support.support_points) / sigma)
    colliding = np.any(support.labels > 0, axis=1)
    weights = support.weights.copy()
    removed = np.zeros(support.size, dtype=bool)
    for i in range(support.size):
        if removed[i]:
            continue
        limit = threshold_collision if colliding[i] else threshold_free
        same = np.all(support.labels == support.labels[i], axis=1)
        redundant = same & (gram[i] > limit) & ~removed
        redundant[: i + 1] = False
        weights[i] += weights[redundant].sum(axis=0)
        removed |= redundant
    if not removed.any():
        return support
    keep = np.flatnonzero(~removed)
    logger.debug(f"Gram pruning removed {support.size - keep.size} of {support.size} support vectors")
    return replace(
        support,
        support=support.support[keep],
        weights=weights[keep],
        labels=support.labels[keep],
        support_points=support.support_points[keep],
    )


# --- geometric oracle --------------------------------------------------------


def _sphere_hits(world: GeometricWorld, centers: np.ndarray, radii: np.ndarray) -> np.ndarray:
    """(N, c) booleans: any sphere of a row touches an obstacle of each category."""
    hits = np.zeros((centers.shape[0], world.categories), dtype=bool)
    if centers.shape[1] == 0:
        return hits
    flat = centers.reshape(-1, 3)
    for obstacle in world.obstacles:
        dist = obstacle.polytope.distance(flat).reshape(centers.shape[:2])
        touching = np.any(dist < radii + obstacle.clearance, axis=1)
        hits[:, obstacle.category] |= touching
    return hits


def ground_truth_labels(
    world: GeometricWorld, model: RobotModel, Q: np.ndarray, group: Optional[int] = None
) -> np.ndarray:
    """Oracle labels (N, c) in {+1, -1} for one group (None = whole robot)."""
    spheres = list(model.collision_spheres) if group is None else model.group_spheres(group)
    Q = np.atleast_2d(Q)
    if not spheres:
        return -np.ones((Q.shape[0], world.categories))
    centers = point_positions(model, Q, spheres)
    radii = np.array([s.radius for s in spheres])
    return np.where(_sphere_hits(world, centers, radii), 1.0, -1.0)


def ground_truth_collision(world: GeometricWorld, model: RobotModel, q: np.ndarray) -> dict:
    """Group id -> (c,) booleans: true when a group sphere intersects an obstacle."""
    q = model.check_q(q)
    return {g: ground_truth_labels(world, model, q[None, :], g)[0] > 0 for g in model.groups}


def grid_configurations(model: RobotModel, resolution: int) -> np.ndarray:
    """Regular grid over the joint-limit box (resolution per axis)."""
    axes = [np.linspace(lo, hi, resolution) for lo, hi in zip(model.q_min, model.q_max)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, model.joint_count)


# --- segmented detector ------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SegmentedDetector:
    """One support set per collision group of a placed robot model."""

    model: RobotModel
    supports: dict = field(default_factory=dict)  # group id -> SupportSet

    @property
    def total_support(self) -> int:
        return sum(s.size for s in self.supports.values())

    def scores(self, q: np.ndarray) -> GroupScores:
        return {g: score(s, self.model, q) for g, s in self.supports.items()}

    def predict(self, Q: np.ndarray) -> np.ndarray:
        """(N,) booleans: any group predicts collision in any category."""
        Q = np.atleast_2d(Q)
        hits = np.zeros(Q.shape[0], dtype=bool)
        for support in self.supports.values():
            hits |= np.any(score_batch(support, self.model, Q) > 0, axis=1)
        return hits


def train_segmented(
    X: np.ndarray,
    world: GeometricWorld,
    model: RobotModel,
    kernel_order: int = DEFAULT_KERNEL_ORDER,
    workers: int = 1,
    static_budget: int = SV_BUDGET_STATIC,
    dynamic_budget: int = SV_BUDGET_DYNAMIC,
    kernel_sigma: float = KERNEL_SIGMA,
) -> SegmentedDetector:
    """Label X with the oracle per group and train every group independently."""

    def fit(group: int) -> tuple[int, SupportSet]:
        labels = ground_truth_labels(world, model, X, group)
        budget = default_budget(model, group, static_budget, dynamic_budget)
        return group, train(LabeledDataset(X, labels), model, group, kernel_order, budget, kernel_sigma)

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        supports = dict(pool.map(fit, model.groups))
    return SegmentedDetector(model, supports)


def train_unified(
    X: np.ndarray,
    world: GeometricWorld,
    model: RobotModel,
    kernel_order: int = DEFAULT_KERNEL_ORDER,
    static_budget: int = SV_BUDGET_STATIC,
    dynamic_budget: int = SV_BUDGET_DYNAMIC,
    kernel_sigma: float = KERNEL_SIGMA,
) -> SupportSet:
    """Whole-robot baseline: one support set over every control point."""
    labels = ground_truth_labels(world, model, X, None)
    budget = default_budget(model, None, static_budget, dynamic_budget)
    return train(LabeledDataset(X, labels), model, None, kernel_order, budget, kernel_sigma)


# --- active learning ---------------------------------------------------------


class BiasedSampler:
    """Mixture of neighbourhoods of past trajectories and uniform joint-space samples."""

    def __init__(
        self,
        q_min: np.ndarray,
        q_max: np.ndarray,
        rng: np.random.Generator,
        bias: float = 0.5,
        sigma: float = 0.2,
        memory: int = 2000,
    ):
        self.q_min = np.asarray(q_min, dtype=float)
        self.q_max = np.asarray(q_max, dtype=float)
        self.rng = rng
        self.bias = bias
        self.sigma = sigma
        self._history: deque = deque(maxlen=memory)

    def record(self, configurations: np.ndarray) -> None:
        for q in np.atleast_2d(configurations):
            self._history.append(np.array(q, dtype=float))

    def __call__(self, count: int) -> np.ndarray:
        if not (np.all(np.isfinite(self.q_min)) and np.all(np.isfinite(self.q_max))):
            raise SamplerExhaustedError("Uniform samples need finite joint limits")
        biased = int(round(self.bias * count)) if self._history else 0
        uniform = self.rng.uniform(self.q_min, self.q_max, size=(count - biased, len(self.q_min)))
        if not biased:
            return uniform
        history = np.array(self._history)
        anchors = history[self.rng.integers(0, len(history), size=biased)]
        near = anchors + self.rng.normal(0.0, self.sigma, size=anchors.shape)
        return np.vstack([np.clip(near, self.q_min, self.q_max), uniform])


def active_update(
    support: SupportSet,
    model: RobotModel,
    world: GeometricWorld,
    exploit_sigma: float,
    explore_sampler: Callable[[int], np.ndarray],
    rng: np.random.Generator,
    exploit_per_sv: int = 2,
    explore_samples: int = 400,
    threshold_free: float = THRESHOLD_FREE,
    threshold_collision: float = THRESHOLD_COLLISION,
    gram_sigma: float = GRAM_SIGMA,
) -> SupportSet:
    """One active-learning cycle against the current world.

    Weights and hypotheses restart from zero; the exploitation phase (Gaussian
    samples around the previous support vectors) is fitted before the
    exploration samples are added, then redundant vectors are pruned.
    """
    group = support.group
    base = support.support
    exploit = np.zeros((0, model.joint_count))
    if base.size:
        exploit = np.repeat(base, exploit_per_sv, axis=0)
        exploit = np.clip(exploit + rng.normal(0.0, exploit_sigma, exploit.shape), model.q_min, model.q_max)
    try:
        explore = np.atleast_2d(explore_sampler(explore_samples)).reshape(-1, model.joint_count)
    except SamplerExhaustedError as e:
        logger.warning(f"{model.name} group {group}: no exploration samples ({e})")
        explore = np.zeros((0, model.joint_count))
    if len(explore) < explore_samples:
        logger.warning(f"Exploration sampler returned {len(explore)} of {explore_samples} samples")

    X = np.vstack([base, exploit, explore])
    if len(X) == 0:
        return support
    labels = ground_truth_labels(world, model, X, group)
    points = point_positions(model, X, support.control_points)
    fit = _Perceptron(points, labels, support.kernel_order, support.kernel_sigma, support.sv_budget)

    # exploitation phase: only the old support vectors and their neighbourhoods
    fit.run(limit=len(base) + len(exploit))
    # exploration phase: new samples join with zero weight
    violations = fit.run()
    updated = _support_from(fit, X, model, group, support.sv_budget, violations)
    updated = gram_prune(updated, threshold_free, threshold_collision, gram_sigma)
    logger.debug(
        f"{model.name} group {group}: active update {support.size} -> {updated.size} support vectors, "
        f"{violations} violations"
    )
    return updated


def update_detector(
    detector: SegmentedDetector,
    world: GeometricWorld,
    sampler: Callable[[int], np.ndarray],
    rng: np.random.Generator,
    exploit_sigma: float = 0.1,
    **kwargs,
) -> SegmentedDetector:
    supports = {
        g: active_update(s, detector.model, world, exploit_sigma, sampler, rng, **kwargs)
        for g, s in detector.supports.items()
    }
    return SegmentedDetector(detector.model, supports)
