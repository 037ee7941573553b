"""B-spline optimal control problem for the closed-chain system and its solver.

Decision vector x = [C (M·d), T, ε]: spline control points over the full state
z = [q1, q2, x_obj], the duration and the terminal-pose slack. Equalities pin
the start, soften the goal by ε, enforce the closed chain at every
collocation point and keep control-point quaternions unit. Inequalities bound
scaled velocities and accelerations and keep every proxy collision score at
or below -margin. The solver is an augmented Lagrangian around scipy's L-BFGS-B.
"""

import logging
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np
from scipy.optimize import minimize

from .bspline import (
    DEFAULT_COLLOCATION_POINTS,
    DEFAULT_CONTROL_POINTS,
    DEFAULT_DEGREE,
    BSplineCurve,
    KnotVector,
    PhaseTrajectory,
    basis_matrix,
    collocation_matrices,
    derivative_matrix,
    time_scaled_samples,
    uniform_phases,
)
from .errors import DimensionError
from .kinematics import (
    ClosedChainSystem,
    Pose,
    SystemState,
    matrix_to_quat,
    object_frames,
    quat_component_bound,
    quat_conjugate,
    quat_left_matrix,
    quat_multiply,
    quat_right_matrix,
)
from .proxy_collision import score_gradient
from .visibility import VisibilitySupportSet, visibility_scores

logger = logging.getLogger(__name__)

EPS_MAX_POSITION = 0.05
EPS_MAX_ORIENTATION = 0.1  # rad
COLLISION_MARGIN = 0.01
# Violation above this multiple of the tolerance at exit means infeasible.
INFEASIBLE_FACTOR = 1e3
# Outer iterations must shrink the violation by this factor or the penalty grows.
PROGRESS_RATIO = 0.25


class SolveStatus(str, Enum):
    OPTIMAL = "optimal"
    FEASIBLE = "feasible"
    MAX_ITER = "max_iter"
    INFEASIBLE = "infeasible"

    @property
    def usable(self) -> bool:
        return self in (SolveStatus.OPTIMAL, SolveStatus.FEASIBLE)


@dataclass
class PlannerWeights:
    acc: float = 1e-3
    dexterity: float = 1e-2
    duration: float = 0.1
    vis: float = 1.0
    slack: float = 100.0

    def __post_init__(self):
        for name in ("acc", "dexterity", "duration", "vis", "slack"):
            if getattr(self, name) < 0:
                raise DimensionError(f"Weight {name} must be non-negative")


@dataclass
class SolverSettings:
    max_outer: int = 30
    max_inner: int = 200
    eq_tol: float = 1e-4
    ineq_tol: float = 1e-6
    penalty_init: float = 10.0
    penalty_growth: float = 10.0
    penalty_max: float = 1e8


def slack_bound(position: float = EPS_MAX_POSITION, orientation: float = EPS_MAX_ORIENTATION) -> np.ndarray:
    """Slack box for [position (m), quaternion]; `orientation` is an angle in rad."""
    return np.concatenate([np.full(3, position), np.full(4, quat_component_bound(orientation))])


@dataclass(eq=False)
class PlannerProblem:
    system: ClosedChainSystem
    x_obj_initial: Pose
    x_obj_final: Pose
    weights: PlannerWeights = field(default_factory=PlannerWeights)
    eps_max: np.ndarray = field(default_factory=slack_bound)
    degree: int = DEFAULT_DEGREE
    control_points: int = DEFAULT_CONTROL_POINTS
    collocation_points: int = DEFAULT_COLLOCATION_POINTS
    t_min: float = 0.5
    t_max: float = 30.0
    start_state: Optional[np.ndarray] = None  # full state pinned at s = 0 (MPC)
    goal_hint: Optional[np.ndarray] = None  # state used only to seed the initial guess
    detectors: dict = field(default_factory=dict)  # robot index -> SegmentedDetector
    visibility: Optional[VisibilitySupportSet] = None
    camera_robot: int = 1
    collision_margin: float = COLLISION_MARGIN

    def __post_init__(self):
        self.eps_max = np.broadcast_to(np.asarray(self.eps_max, dtype=float), (7,)).copy()
        if not 0 < self.t_min <= self.t_max:
            raise DimensionError(f"Duration bounds must satisfy 0 < T_min <= T_max, got [{self.t_min}, {self.t_max}]")
        if np.any(self.eps_max < 0):
            raise DimensionError("Slack bounds must be non-negative")
        if self.collocation_points < 1:
            raise DimensionError("Need at least one collocation interval")
        if self.start_state is not None:
            self.start_state = np.asarray(self.start_state, dtype=float)
            if self.start_state.shape != (self.system.state_dim,):
                raise DimensionError(f"Start state needs {self.system.state_dim} entries")

    @property
    def state_dim(self) -> int:
        return self.system.state_dim

    @property
    def variable_count(self) -> int:
        return self.control_points * self.state_dim + 1 + 7


def _through_collocation(basis: np.ndarray, jac_z: np.ndarray) -> np.ndarray:
    """Chain per-sample Jacobians (K, r, d) through z_k = basis[k] @ C into (K·r, M·d)."""
    k, r, d = jac_z.shape
    full = basis[:, None, :, None] * jac_z[:, :, None, :]
    return full.reshape(k * r, basis.shape[1] * d)


class OcpNlp:
    """Cost, constraints and their Jacobians for one PlannerProblem."""

    def __init__(self, problem: PlannerProblem):
        self.problem = problem
        system = problem.system
        self.system = system
        self.d = system.state_dim
        self.M = problem.control_points
        self.knot_vector = KnotVector.clamped_uniform(problem.degree, self.M)
        self.phases = uniform_phases(problem.collocation_points)
        self.P, _, _ = collocation_matrices(self.knot_vector, self.phases)
        self.D1 = derivative_matrix(self.knot_vector)
        kv1 = KnotVector(problem.degree - 1, self.knot_vector.knots[1:-1])
        self.D2 = derivative_matrix(kv1) @ self.D1 if problem.degree >= 2 else np.zeros((0, self.M))

        n1, n2 = system.joint_counts
        self.q_dims = (np.arange(n1), np.arange(n1, n1 + n2))
        self.joint_dims = np.arange(n1 + n2)
        self.pos_dims = np.arange(n1 + n2, n1 + n2 + 3)
        self.quat_dims = np.arange(n1 + n2 + 3, n1 + n2 + 7)
        r1, r2 = system.robots
        self.q_mid = np.concatenate([r1.q_center, r2.q_center])
        v_limit = np.concatenate([r1.v_limit, r2.v_limit])
        a_limit = np.concatenate([r1.a_limit, r2.a_limit])
        self.v_dims = self.joint_dims[np.isfinite(v_limit)]
        self.a_dims = self.joint_dims[np.isfinite(a_limit)]
        self.v_limit = v_limit[self.v_dims]
        self.a_limit = a_limit[self.a_dims]

        self.x_initial = problem.x_obj_initial.as_vector()
        final = problem.x_obj_final.as_vector()
        # compare quaternions on the same sheet of the double cover
        if np.dot(final[3:], self.x_initial[3:]) < 0:
            final[3:] = -final[3:]
        self.x_final = final

        self.n_c = self.M * self.d
        self.t_index = self.n_c
        self.eps_slice = slice(self.n_c + 1, self.n_c + 8)
        self.variable_count = self.n_c + 8
        lo, hi = system.state_bounds()
        box = [(None if np.isinf(a) else a, None if np.isinf(b) else b) for a, b in zip(lo, hi)]
        self.bounds = box * self.M + [(problem.t_min, problem.t_max)] + [(-e, e) for e in problem.eps_max]
        self.vis_model = system.placed(problem.camera_robot) if problem.visibility is not None else None

    # --- packing ---------------------------------------------------------

    def unpack(self, x: np.ndarray) -> tuple[np.ndarray, float, np.ndarray]:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.variable_count,):
            raise DimensionError(f"Decision vector needs {self.variable_count} entries, got {x.shape}")
        return x[: self.n_c].reshape(self.M, self.d), float(x[self.t_index]), x[self.eps_slice]

    def pack(self, control_points: np.ndarray, duration: float, slack: Optional[np.ndarray] = None) -> np.ndarray:
        slack = np.zeros(7) if slack is None else slack
        return np.concatenate([np.asarray(control_points, dtype=float).ravel(), [duration], slack])

    def clip(self, x: np.ndarray) -> np.ndarray:
        lo = np.array([-np.inf if b[0] is None else b[0] for b in self.bounds])
        hi = np.array([np.inf if b[1] is None else b[1] for b in self.bounds])
        return np.clip(x, lo, hi)

    def start_vector(self) -> np.ndarray:
        if self.problem.start_state is not None:
            return self.problem.start_state
        return np.concatenate([self.q_mid, self.x_initial])

    def initial_guess(self) -> np.ndarray:
        """Control points interpolated from the start to the goal hint (or held constant)."""
        start = self.start_vector()
        goal = start.copy() if self.problem.goal_hint is None else np.asarray(self.problem.goal_hint, dtype=float)
        if self.problem.goal_hint is None:
            goal[self.pos_dims] = self.x_final[:3]
            goal[self.quat_dims] = self.x_final[3:]
        elif np.dot(goal[self.quat_dims], start[self.quat_dims]) < 0:
            goal[self.quat_dims] = -goal[self.quat_dims]
        ratio = np.linspace(0.0, 1.0, self.M)[:, None]
        C = (1 - ratio) * start + ratio * goal
        travel = np.abs(goal[self.v_dims] - start[self.v_dims])
        duration = 1.5 * float(np.max(travel / self.v_limit, initial=0.0)) * (self.knot_vector.degree or 1)
        duration = float(np.clip(duration, self.problem.t_min, self.problem.t_max))
        return self.clip(self.pack(C, duration))

    # --- cost ------------------------------------------------------------

    def cost_terms(self, x: np.ndarray) -> dict:
        return self._cost(x)[0]

    def cost(self, x: np.ndarray) -> tuple[float, np.ndarray]:
        terms, grad = self._cost(x)
        return float(sum(terms.values())), grad

    def _cost(self, x: np.ndarray) -> tuple[dict, np.ndarray]:
        w = self.problem.weights
        C, T, eps = self.unpack(x)
        grad = np.zeros(self.variable_count)
        grad_c = np.zeros((self.M, self.d))
        terms = {}

        acc = self.D2 @ C
        acc_sq = float(np.sum(acc**2))
        terms["acceleration"] = w.acc * acc_sq / T**4
        grad_c += 2 * w.acc * self.D2.T @ acc / T**4
        grad[self.t_index] += -4 * w.acc * acc_sq / T**5

        Z = self.P @ C
        dev = Z[:, self.joint_dims] - self.q_mid
        terms["dexterity"] = w.dexterity * float(np.sum(dev**2))
        grad_c[:, self.joint_dims] += 2 * w.dexterity * self.P.T @ dev

        terms["duration"] = w.duration * T
        grad[self.t_index] += w.duration

        if self.problem.visibility is not None:
            dims = self.q_dims[self.problem.camera_robot - 1]
            values, grads = visibility_scores(self.problem.visibility, self.vis_model, Z[:, dims])
            count = len(values)
            terms["visibility"] = -w.vis * float(np.mean(values))
            grad_c[:, dims] += -w.vis * self.P.T @ grads / count

        terms["slack"] = w.slack * float(eps @ eps)
        grad[self.eps_slice] += 2 * w.slack * eps

        grad[: self.n_c] += grad_c.ravel()
        return terms, grad

    # --- equalities ------------------------------------------------------

    def equalities(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        C, _, eps = self.unpack(x)
        values, rows = [], []

        # start
        if self.problem.start_state is not None:
            values.append(C[0] - self.problem.start_state)
            start = np.zeros((self.d, self.variable_count))
            start[:, : self.d] = np.eye(self.d)
        else:
            obj = np.concatenate([self.pos_dims, self.quat_dims])
            values.append(C[0, obj] - self.x_initial)
            start = np.zeros((7, self.variable_count))
            start[np.arange(7), obj] = 1.0
        rows.append(start)

        # goal, softened by the slack
        obj = np.concatenate([self.pos_dims, self.quat_dims])
        values.append(C[-1, obj] - self.x_final - eps)
        goal = np.zeros((7, self.variable_count))
        goal[np.arange(7), (self.M - 1) * self.d + obj] = 1.0
        goal[:, self.eps_slice] = -np.eye(7)
        rows.append(goal)

        # closed chain at every collocation point
        Z = self.P @ C
        for index in (1, 2):
            value, jac_z = self._chain_block(index, Z)
            values.append(value.ravel())
            rows.append(np.hstack([_through_collocation(self.P, jac_z), np.zeros((value.size, 8))]))

        # unit quaternions on the control points
        quats = C[:, self.quat_dims]
        values.append(np.sum(quats**2, axis=1) - 1.0)
        unit = np.zeros((self.M, self.M, self.d))
        unit[np.arange(self.M)[:, None], np.arange(self.M)[:, None], self.quat_dims[None, :]] = 2 * quats
        rows.append(np.hstack([unit.reshape(self.M, self.n_c), np.zeros((self.M, 8))]))

        return np.concatenate(values), np.vstack(rows)

    def _chain_block(self, index: int, Z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Residual (K, 6) between robot `index`'s object frame and the state, with dr/dz (K, 6, d)."""
        dims = self.q_dims[index - 1]
        frames, jac = object_frames(self.system, index, Z[:, dims])
        p_fk = frames[:, :3, 3]
        q_fk = matrix_to_quat(frames[:, :3, :3])
        p_s = Z[:, self.pos_dims]
        q_s = Z[:, self.quat_dims]
        sign = np.where(np.sum(q_s * q_fk, axis=1) < 0, -1.0, 1.0)
        q_fk = q_fk * sign[:, None]

        k = Z.shape[0]
        jac_z = np.zeros((k, 6, self.d))
        value = np.zeros((k, 6))
        value[:, :3] = p_fk - p_s
        jac_z[:, :3, dims] = jac[:, :3]
        jac_z[:, :3, self.pos_dims] = -np.eye(3)

        value[:, 3:] = 2 * quat_multiply(quat_conjugate(q_s), q_fk)[:, 1:]
        right = quat_right_matrix(q_fk)
        conj = np.diag([1.0, -1.0, -1.0, -1.0])
        jac_z[:, 3:, self.quat_dims] = 2 * (right @ conj)[:, 1:, :]
        # d q_fk = ½ [0, ω] ⊗ q_fk with world angular velocity ω = J_ang dq
        spin = quat_left_matrix(quat_conjugate(q_s)) @ right
        jac_z[:, 3:, dims] = spin[:, 1:, 1:] @ jac[:, 3:]
        return value, jac_z

    # --- inequalities ----------------------------------------------------

    def inequalities(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        C, T, _ = self.unpack(x)
        values, rows = [], []

        for deriv, dims, limit, power in (
            (self.D1, self.v_dims, self.v_limit, 1),
            (self.D2, self.a_dims, self.a_limit, 2),
        ):
            if deriv.shape[0] == 0 or dims.size == 0:
                continue
            cps = deriv @ C[:, dims]  # (R, J)
            select = np.zeros((dims.size, self.d))
            select[np.arange(dims.size), dims] = 1.0
            block = (deriv[:, None, :, None] * select[None, :, None, :]).reshape(-1, self.n_c)
            scale = np.tile(limit, deriv.shape[0])
            for sign in (1.0, -1.0):
                values.append(sign * cps.ravel() - T**power * scale)
                jac = np.zeros((block.shape[0], self.variable_count))
                jac[:, : self.n_c] = sign * block
                jac[:, self.t_index] = -power * T ** (power - 1) * scale
                rows.append(jac)

        Z = self.P @ C
        margin = self.problem.collision_margin
        for index, detector in sorted(self.problem.detectors.items()):
            dims = self.q_dims[index - 1]
            for group in sorted(detector.supports):
                scores, grads = score_gradient(detector.supports[group], detector.model, Z[:, dims])
                values.append((scores + margin).ravel())
                jac_z = np.zeros(scores.shape + (self.d,))
                jac_z[..., dims] = grads
                rows.append(np.hstack([_through_collocation(self.P, jac_z), np.zeros((scores.size, 8))]))

        if not values:
            return np.zeros(0), np.zeros((0, self.variable_count))
        return np.concatenate(values), np.vstack(rows)

    def violation(self, x: np.ndarray) -> tuple[float, float]:
        h, _ = self.equalities(x)
        g, _ = self.inequalities(x)
        return float(np.max(np.abs(h), initial=0.0)), float(np.max(g, initial=0.0))


def build_ocp(problem: PlannerProblem) -> OcpNlp:
    n1, n2 = problem.system.joint_counts
    if problem.start_state is not None and problem.start_state.size != n1 + n2 + 7:
        raise DimensionError("Start state does not match the system")
    for index, detector in problem.detectors.items():
        if detector.model.joint_count != problem.system.joint_counts[index - 1]:
            raise DimensionError(f"Detector for robot {index} has the wrong joint count")
    return OcpNlp(problem)


@dataclass(eq=False)
class PlannerSolution:
    control_points: np.ndarray  # (M, d)
    duration: float
    slack: np.ndarray
    status: SolveStatus
    knot_vector: KnotVector
    system: ClosedChainSystem
    iterations: int = 0
    eq_residual: float = 0.0
    ineq_violation: float = 0.0
    cost_breakdown: dict = field(default_factory=dict)
    solve_time: float = 0.0
    decision: Optional[np.ndarray] = None

    @property
    def states(self) -> list[SystemState]:
        return [SystemState.from_vector(self.system, c) for c in self.control_points]

    def trajectory(self) -> PhaseTrajectory:
        curve = BSplineCurve(self.knot_vector.degree, self.control_points, self.knot_vector)
        return PhaseTrajectory(curve, self.duration)

    def sample(self, s) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """State, time velocity and time acceleration at phase s."""
        return time_scaled_samples(self.trajectory(), s)

    def references(self, s: float) -> dict:
        """Joint references q_d, q̇_d, q̈_d for both robots at phase s."""
        z, zd, zdd = self.sample(s)
        out = {}
        for name, part in (("q", z), ("qd", zd), ("qdd", zdd)):
            q1, q2, _ = self.system.split_state(part)
            out[f"{name}1"], out[f"{name}2"] = q1, q2
        return out


def _lagrangian(nlp: OcpNlp, lam_h: np.ndarray, lam_g: np.ndarray, mu: float):
    def evaluate(x: np.ndarray) -> tuple[float, np.ndarray]:
        f, grad = nlp.cost(x)
        h, jh = nlp.equalities(x)
        g, jg = nlp.inequalities(x)
        shifted = np.maximum(0.0, lam_g + mu * g)
        value = f + lam_h @ h + 0.5 * mu * h @ h + (shifted @ shifted - lam_g @ lam_g) / (2 * mu)
        grad = grad + jh.T @ (lam_h + mu * h) + jg.T @ shifted
        return value, grad

    return evaluate


def solve(
    nlp: OcpNlp, warm_start: Optional[np.ndarray] = None, settings: Optional[SolverSettings] = None
) -> PlannerSolution:
    """Augmented-Lagrangian outer loop over bounded L-BFGS-B inner solves.

    Always returns a solution; `status` says whether it can be used.
    """
    settings = settings or SolverSettings()
    started = time.perf_counter()
    x = nlp.clip(nlp.initial_guess() if warm_start is None else np.asarray(warm_start, dtype=float))
    lam_h = np.zeros(nlp.equalities(x)[0].size)
    lam_g = np.zeros(nlp.inequalities(x)[0].size)
    mu = settings.penalty_init
    previous = np.inf
    status = SolveStatus.MAX_ITER
    inner_ok = False
    outer = 0

    for outer in range(1, settings.max_outer + 1):
        result = minimize(
            _lagrangian(nlp, lam_h, lam_g, mu),
            x,
            jac=True,
            method="L-BFGS-B",
            bounds=nlp.bounds,
            options={"maxiter": settings.max_inner},
        )
        x = result.x
        inner_ok = bool(result.success)
        h, _ = nlp.equalities(x)
        g, _ = nlp.inequalities(x)
        eq_res = float(np.max(np.abs(h), initial=0.0))
        ineq_res = float(np.max(g, initial=0.0))
        logger.debug(f"Outer {outer}: mu={mu:.1e} eq={eq_res:.2e} ineq={ineq_res:.2e} inner={result.nit}")
        if eq_res <= settings.eq_tol and ineq_res <= settings.ineq_tol:
            status = SolveStatus.OPTIMAL if inner_ok else SolveStatus.FEASIBLE
            break
        lam_h = lam_h + mu * h
        lam_g = np.maximum(0.0, lam_g + mu * g)
        violation = max(eq_res / settings.eq_tol, ineq_res / settings.ineq_tol)
        if mu >= settings.penalty_max and violation > (1 - PROGRESS_RATIO) * previous:
            break
        if violation > PROGRESS_RATIO * previous:
            mu = min(mu * settings.penalty_growth, settings.penalty_max)
        previous = violation

    eq_res, ineq_res = nlp.violation(x)
    if not status.usable:
        far = eq_res > INFEASIBLE_FACTOR * settings.eq_tol or ineq_res > INFEASIBLE_FACTOR * settings.ineq_tol
        status = SolveStatus.INFEASIBLE if far else SolveStatus.MAX_ITER
    C, T, eps = nlp.unpack(x)
    elapsed = time.perf_counter() - started
    logger.debug(f"Solve finished: {status.value} after {outer} outer iterations ({elapsed:.2f}s), T={T:.3f}")
    return PlannerSolution(
        control_points=C.copy(),
        duration=T,
        slack=eps.copy(),
        status=status,
        knot_vector=nlp.knot_vector,
        system=nlp.system,
        iterations=outer,
        eq_residual=eq_res,
        ineq_violation=ineq_res,
        cost_breakdown=nlp.cost_terms(x),
        solve_time=elapsed,
        decision=x.copy(),
    )


def shifted_guess(nlp: OcpNlp, previous: PlannerSolution, phase: float, duration: float) -> np.ndarray:
    """Warm start: refit the unexecuted part s in [phase, 1] of a previous plan onto a fresh spline."""
    phase = float(np.clip(phase, 0.0, 1.0))
    dense = np.linspace(0.0, 1.0, 4 * nlp.M + 1)
    samples = previous.sample(phase + dense * (1.0 - phase))[0]
    basis = basis_matrix(nlp.knot_vector, dense)
    C = np.linalg.lstsq(basis, samples, rcond=None)[0]
    if nlp.problem.start_state is not None:
        C[0] = nlp.problem.start_state
    return nlp.clip(nlp.pack(C, duration, previous.slack))
