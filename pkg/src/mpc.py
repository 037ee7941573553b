"""Shrinking-horizon MPC loop with perception mailbox and replanning mode."""

import logging
import queue
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Optional

import numpy as np

from .config import Config
from .errors import NoValidPosesError
from .geometry import GeometricWorld, Obstacle
from .kinematics import ClosedChainSystem, Pose, SystemState
from .perception import OcclusionModel, PosedSpheres, eye_in_hand_camera
from .planner import (
    PlannerProblem,
    PlannerSolution,
    PlannerWeights,
    SolverSettings,
    SolveStatus,
    build_ocp,
    shifted_guess,
    slack_bound,
    solve,
)
from .proxy_collision import BiasedSampler, update_detector
from .visibility import (
    VisibilitySupportSet,
    occlusion_changed,
    refresh_visibility_model,
    visibility_score,
)

logger = logging.getLogger(__name__)

# Failed solves in a row before the error callback fires.
MAX_FAILURES = 3
# Phase treated as the end of the plan.
PHASE_END = 1.0 - 1e-9


class Mode(str, Enum):
    TASK = "task"
    REPLANNING = "replanning"


@dataclass
class PerceptionUpdate:
    """One frame of perception posted to the controller's mailbox."""

    occlusion: OcclusionModel
    timestamp: float = 0.0


@dataclass
class MpcLoopState:
    state: SystemState
    goal: Pose
    remaining: float  # duration left of the current plan (s)
    eps_max: np.ndarray
    mode: Mode = Mode.TASK
    occlusion: Optional[OcclusionModel] = None
    solution: Optional[PlannerSolution] = None
    executed_phase: float = 0.0  # phase of `solution` already executed
    elapsed: float = 0.0
    saved_goal: Optional[Pose] = None
    saved_eps: Optional[np.ndarray] = None
    log: list = field(default_factory=list)  # (time, state vector) of executed states
    done: bool = False


@dataclass
class StepResult:
    index: int
    time: float
    mode: Mode
    status: SolveStatus
    solve_time: float
    visibility: float
    eps_bound: float
    remaining: float
    state: np.ndarray
    references: dict
    goal: Pose
    done: bool
    plan: Optional[PlannerSolution] = None  # plan followed during this step
    segment: tuple = (0.0, 0.0)  # phase interval of `plan` executed during this step


def perceived_world(occlusion: OcclusionModel, dynamic: list, d_safe: float) -> GeometricWorld:
    """Obstacle world from perceived hulls; hulls flagged dynamic get the safety clearance."""
    world = GeometricWorld()
    for i, hull in enumerate(occlusion.obstacle_hulls):
        clearance = d_safe if i in dynamic else 0.0
        world = world.with_obstacle(Obstacle(hull, clearance=clearance, name=f"hull{i}"))
    return world


def system_spheres(system: ClosedChainSystem, state: SystemState) -> PosedSpheres:
    """Collision spheres of both arms; robot 1 carries the payload."""
    first = PosedSpheres.of(system.assembly_model(1), state.q1)
    return first.merged(PosedSpheres.of(system.placed(2), state.q2))


def sphere_distances(spheres: PosedSpheres, points: np.ndarray) -> np.ndarray:
    """Distance from each point to the nearest sphere surface."""
    points = np.atleast_2d(points)
    if len(spheres.radii) == 0:
        return np.full(len(points), np.inf)
    dist = np.linalg.norm(points[:, None, :] - spheres.centers[None, :, :], axis=2) - spheres.radii
    return dist.min(axis=1)


def shrinking_horizon_step(
    loop: MpcLoopState,
    problem: PlannerProblem,
    dt: float,
    settings: Optional[SolverSettings] = None,
) -> tuple[PlannerSolution, MpcLoopState]:
    """Solve from the current state, then execute dt of the accepted plan.

    A failed solve keeps the previous plan (when there is one) and the loop
    keeps following it.
    """
    nlp = build_ocp(problem)
    warm = None
    if loop.solution is not None:
        duration = float(np.clip(loop.remaining, problem.t_min, problem.t_max))
        warm = shifted_guess(nlp, loop.solution, loop.executed_phase, duration)
    solution = solve(nlp, warm, settings)

    if solution.status.usable or loop.solution is None:
        plan, start_phase = solution, 0.0
        if not solution.status.usable:
            logger.warning(f"Solver returned {solution.status.value} with no previous plan; following it anyway")
    else:
        logger.warning(f"Solver returned {solution.status.value}; keeping the previous plan")
        plan, start_phase = loop.solution, loop.executed_phase

    phase = min(1.0, start_phase + dt / plan.duration)
    z = plan.sample(phase)[0]
    state = SystemState.from_vector(problem.system, z)
    remaining = plan.duration * (1.0 - phase)
    if loop.mode is Mode.TASK:
        remaining = min(remaining, loop.remaining)
    elapsed = loop.elapsed + dt
    updated = replace(
        loop,
        state=state,
        solution=plan,
        executed_phase=phase,
        remaining=remaining,
        elapsed=elapsed,
        log=loop.log + [(elapsed, z)],
        done=loop.mode is Mode.TASK and phase >= PHASE_END,
    )
    return solution, updated


def replanning_mode_enter(loop: MpcLoopState, evade_slack: np.ndarray) -> MpcLoopState:
    """Hold position: start and goal both become the current object pose, slack lets it evade."""
    if loop.mode is Mode.REPLANNING:
        return loop
    logger.info(f"Entering replanning mode at t={loop.elapsed:.2f}s")
    current = loop.state.x_obj
    return replace(
        loop,
        mode=Mode.REPLANNING,
        saved_goal=loop.goal,
        saved_eps=loop.eps_max,
        goal=current,
        eps_max=np.asarray(evade_slack, dtype=float),
        solution=None,
        executed_phase=0.0,
    )


def replanning_mode_exit(loop: MpcLoopState, t_max: float) -> MpcLoopState:
    """Restore the task goal with a fresh horizon."""
    if loop.mode is Mode.TASK:
        return loop
    logger.info(f"Leaving replanning mode at t={loop.elapsed:.2f}s")
    return replace(
        loop,
        mode=Mode.TASK,
        goal=loop.saved_goal,
        eps_max=loop.saved_eps,
        saved_goal=None,
        saved_eps=None,
        remaining=t_max,
        solution=None,
        executed_phase=0.0,
    )


class MpcController:
    """Runs perception refresh, learning and planning once per control step."""

    def __init__(
        self,
        system: ClosedChainSystem,
        config: Config,
        start: SystemState,
        goal: Pose,
        detectors: dict,
        rng: np.random.Generator,
        target_position: Optional[np.ndarray] = None,
        goal_hint: Optional[np.ndarray] = None,
        refine_target: Optional[Callable[[], Optional[Pose]]] = None,
    ):
        self.system = system
        self.config = config
        self.detectors = detectors  # robot index -> SegmentedDetector
        self.rng = rng
        self.goal_hint = goal_hint
        self.target_position = goal.position if target_position is None else np.asarray(target_position)
        self.refine_target = refine_target
        self.refined = refine_target is None
        self.visibility: Optional[VisibilitySupportSet] = None
        self._static_hulls: Optional[tuple] = None
        self._dynamic: list = []
        self._mailbox: "queue.Queue[PerceptionUpdate]" = queue.Queue()
        self._steps = 0
        self._failures = 0
        self.samplers = {
            index: BiasedSampler(
                d.model.q_min, d.model.q_max, rng, bias=config.get("trajectory_bias")
            )
            for index, d in detectors.items()
        }
        self.loop = MpcLoopState(
            state=start,
            goal=goal,
            remaining=float(config.get("t_max")),
            eps_max=np.zeros(7) if self.refined else config.eps_max,
        )

        self._on_status_change: Optional[Callable[[str], None]] = None
        self._on_error: Optional[Callable[[str], None]] = None
        self._on_step: Optional[Callable[[StepResult], None]] = None

    def set_callbacks(
        self,
        on_status_change: Optional[Callable[[str], None]] = None,
        on_error: Optional[Callable[[str], None]] = None,
        on_step: Optional[Callable[[StepResult], None]] = None,
    ) -> None:
        """Set callbacks: status line, error line, and per-step results."""
        self._on_status_change = on_status_change
        self._on_error = on_error
        self._on_step = on_step

    def _notify_status(self, status: str) -> None:
        if self._on_status_change:
            try:
                self._on_status_change(status)
            except Exception:
                pass

    def _notify_error(self, error: str) -> None:
        if self._on_error:
            try:
                self._on_error(error)
            except Exception:
                pass

    def _notify_step(self, result: StepResult) -> None:
        if self._on_step:
            try:
                self._on_step(result)
            except Exception:
                pass

    def post(self, update: PerceptionUpdate) -> None:
        """Hand a perception frame to the loop; only the latest is used."""
        self._mailbox.put(update)

    def _read_mailbox(self) -> Optional[PerceptionUpdate]:
        latest = None
        while True:
            try:
                latest = self._mailbox.get_nowait()
            except queue.Empty:
                return latest

    # --- perception side ---------------------------------------------------

    def robot_spheres(self, state: Optional[SystemState] = None) -> PosedSpheres:
        return system_spheres(self.system, state or self.loop.state)

    def camera(self, state: Optional[SystemState] = None, **kwargs):
        state = state or self.loop.state
        return eye_in_hand_camera(self.system.placed(1), state.q1, **kwargs)

    def _classify_hulls(self, occlusion: OcclusionModel) -> list:
        """Indices of hulls that are not part of the first frame's obstacles."""
        hulls = occlusion.obstacle_hulls
        if self._static_hulls is None:
            self._static_hulls = tuple(hulls)
            return []
        limit = self.config.get("reassociate_distance")
        return [
            i for i, hull in enumerate(hulls)
            if all(float(s.distance(hull.centroid)[0]) > limit for s in self._static_hulls)
        ]

    def _apply_perception(self, update: PerceptionUpdate) -> None:
        previous = self.loop.occlusion
        self._dynamic = self._classify_hulls(update.occlusion)
        changed = occlusion_changed(previous, update.occlusion, self.config.get("vis_refresh_distance"))
        self.loop = replace(self.loop, occlusion=update.occlusion)
        if not changed and previous is not None:
            return
        if previous is not None:
            world = perceived_world(update.occlusion, self._dynamic, self.config.get("d_safe"))
            for index, detector in list(self.detectors.items()):
                if self.loop.solution is not None:
                    dims = slice(0, self.system.joint_counts[0]) if index == 1 else slice(
                        self.system.joint_counts[0], sum(self.system.joint_counts)
                    )
                    self.samplers[index].record(self.loop.solution.control_points[:, dims])
                self.detectors[index] = update_detector(
                    detector,
                    world,
                    self.samplers[index],
                    self.rng,
                    exploit_sigma=self.config.get("exploit_sigma"),
                    exploit_per_sv=self.config.get("exploit_per_sv"),
                    explore_samples=self.config.get("explore_samples"),
                    threshold_free=self.config.get("threshold_free"),
                    threshold_collision=self.config.get("threshold_collision"),
                    gram_sigma=self.config.get("gram_sigma"),
                )
            logger.info(f"Collision proxies updated: {self.support_counts()}")
        if not self.refined:
            self._refresh_visibility(update.occlusion)

    def _refresh_visibility(self, occlusion: OcclusionModel) -> None:
        try:
            self.visibility, _ = refresh_visibility_model(
                self.target_position,
                self.system.placed(1),
                occlusion,
                seed=self.loop.state.q1,
                sigma=self.config.get("vis_sigma"),
                positions=self.config.get("camera_positions"),
                rng=self.rng,
                workers=self.config.workers,
            )
        except NoValidPosesError as e:
            logger.warning(f"Visibility model not rebuilt: {e}")

    def support_counts(self) -> dict:
        return {i: d.total_support for i, d in self.detectors.items()}

    def target_observed(self) -> bool:
        """The placing spot is in some camera's view with a clear sight line."""
        occlusion = self.loop.occlusion
        if occlusion is None:
            return False
        target = self.target_position[None, :]
        for camera in occlusion.cameras:
            if not camera.in_frustum(target)[0]:
                continue
            if occlusion.sight_blocked(camera.origin, self.target_position):
                continue
            if any(cone.contains(target)[0] for cone in occlusion.cones if np.allclose(cone.apex, camera.origin)):
                continue
            return True
        return False

    def visibility_score(self) -> float:
        if self.target_observed():
            return 1.0
        if self.visibility is None:
            return 0.0
        return float(np.clip(visibility_score(self.visibility, self.system.placed(1), self.loop.state.q1), 0.0, 1.0))

    def _coarse_to_fine(self, score: float) -> None:
        if self.refined or score < self.config.get("vis_threshold"):
            return
        pose = self.refine_target()
        if pose is None:
            return
        self.refined = True
        self.target_position = pose.position
        target_goal = pose
        if self.loop.mode is Mode.REPLANNING:
            self.loop = replace(self.loop, saved_goal=target_goal, saved_eps=np.zeros(7))
        else:
            self.loop = replace(self.loop, goal=target_goal, eps_max=np.zeros(7))
        logger.info(f"Target refined at t={self.loop.elapsed:.2f}s; goal slack tightened to zero")
        self._notify_status("Target located")

    def _check_replanning(self) -> None:
        occlusion = self.loop.occlusion
        if occlusion is None:
            return
        spheres = self.robot_spheres()
        trigger = self.config.get("replan_trigger_distance")
        near = [
            i for i in self._dynamic
            if sphere_distances(spheres, occlusion.obstacle_hulls[i].centroid)[0] <= trigger
        ]
        if near and self.loop.mode is Mode.TASK:
            slack = slack_bound(self.config.get("replan_slack"), self.config.get("eps_max_orientation"))
            self.loop = replanning_mode_enter(self.loop, slack)
            self._notify_status("Replanning: intruder nearby")
        elif not self._dynamic and self.loop.mode is Mode.REPLANNING:
            self.loop = replanning_mode_exit(self.loop, float(self.config.get("t_max")))
            self._notify_status("Task resumed")

    # --- planning side -----------------------------------------------------

    def problem(self) -> PlannerProblem:
        loop = self.loop
        state = loop.state
        t_min = float(self.config.get("t_min"))
        t_max = float(self.config.get("t_max"))
        if loop.mode is Mode.TASK:
            t_max = max(min(t_max, loop.remaining), 1e-3)
            t_min = min(t_min, t_max)
        hint = self.goal_hint if loop.mode is Mode.TASK and loop.solution is None else None
        return PlannerProblem(
            system=self.system,
            x_obj_initial=state.x_obj,
            x_obj_final=loop.goal,
            weights=PlannerWeights(**self.config.weight_settings()),
            eps_max=loop.eps_max,
            t_min=t_min,
            t_max=t_max,
            start_state=state.as_vector(),
            goal_hint=hint,
            detectors=self.detectors,
            visibility=None if self.refined else self.visibility,
            collision_margin=self.config.get("collision_margin"),
            **self.config.spline_settings(),
        )

    def step(self) -> StepResult:
        """One control step: read mailbox, refresh models, plan, execute dt."""
        update = self._read_mailbox()
        if update is not None:
            self._apply_perception(update)
        self._check_replanning()
        score = self.visibility_score()
        self._coarse_to_fine(score)

        previous_plan, previous_phase = self.loop.solution, self.loop.executed_phase
        dt = self.config.step_dt
        solution, self.loop = shrinking_horizon_step(
            self.loop, self.problem(), dt, SolverSettings(**self.config.solver_settings())
        )
        if solution.status.usable:
            self._failures = 0
        else:
            self._failures += 1
            if self._failures >= MAX_FAILURES:
                self._notify_error(f"{self._failures} failed solves in a row ({solution.status.value})")

        self._steps += 1
        plan = self.loop.solution
        start_phase = previous_phase if plan is previous_plan else 0.0
        result = StepResult(
            index=self._steps,
            time=self.loop.elapsed,
            mode=self.loop.mode,
            status=solution.status,
            solve_time=solution.solve_time,
            visibility=score,
            eps_bound=float(np.max(self.loop.eps_max)),
            remaining=self.loop.remaining,
            state=self.loop.state.as_vector(),
            references=plan.references(self.loop.executed_phase),
            goal=self.loop.goal,
            done=self.loop.done,
            plan=plan,
            segment=(start_phase, self.loop.executed_phase),
        )
        logger.info(
            f"Step {result.index}: t={result.time:.2f}s mode={result.mode.value} "
            f"status={result.status.value} remaining={result.remaining:.2f}s vis={score:.2f}"
        )
        self._notify_step(result)
        return result
