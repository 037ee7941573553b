"""Scenario files, the scenario runner and the ground-truth replay audit."""

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .config import Config, get_project_root
from .errors import ConfigError, FormatError
from .formats import TrajectoryTable, load_trajectory_table, save_report, save_trajectory_table
from .geometry import ConvexPolytope, GeometricWorld, Obstacle
from .kinematics import (
    ClosedChainSystem,
    Pose,
    SystemState,
    chain_residual,
    load_robot_model,
    matrix_to_quat,
    solve_closed_chain,
    state_from_joints,
)
from .mpc import Mode, MpcController, PerceptionUpdate, StepResult, perceived_world, system_spheres
from .perception import CameraModel, PerceptionSettings, eye_in_hand_camera, perceive_frame
from .proxy_collision import (
    SegmentedDetector,
    ground_truth_labels,
    score,
    train_segmented,
    train_unified,
)
from .plots import emit_plots

logger = logging.getLogger(__name__)

SCENARIO_FORMAT_VERSION = 1
SCENARIOS_DIR = get_project_root() / "scenarios"
OVERSAMPLE = 10
CHAIN_TOLERANCE = 1e-3
LIMIT_TOLERANCE = 1e-6
EVENT_ACTIONS = ("insert", "move", "remove")


# --- scenario description ------------------------------------------------------


@dataclass(frozen=True)
class ObstacleSpec:
    """Axis-aligned box obstacle."""

    name: str
    center: tuple
    size: tuple
    category: int = 0

    def obstacle(self, clearance: float = 0.0) -> Obstacle:
        return Obstacle(ConvexPolytope.box(self.center, self.size), self.category, clearance, self.name)

    @classmethod
    def from_dict(cls, data: dict) -> "ObstacleSpec":
        return cls(data["name"], tuple(data["center"]), tuple(data["size"]), int(data.get("category", 0)))


@dataclass(frozen=True)
class CameraSpec:
    name: str
    position: tuple
    look_at: tuple
    fov_h: float
    fov_v: float
    resolution: tuple = (32, 48)
    max_range: float = 3.0

    def camera(self) -> CameraModel:
        return CameraModel(
            pose=Pose(np.asarray(self.position, dtype=float), look_at_quaternion(self.position, self.look_at)),
            fov_h=self.fov_h,
            fov_v=self.fov_v,
            resolution=tuple(self.resolution),
            max_range=self.max_range,
            name=self.name,
        )

    @classmethod
    def from_dict(cls, data: dict) -> "CameraSpec":
        return cls(
            data["name"],
            tuple(data["position"]),
            tuple(data["look_at"]),
            float(data["fov_h"]),
            float(data["fov_v"]),
            tuple(data.get("resolution", (32, 48))),
            float(data.get("max_range", 3.0)),
        )


@dataclass(frozen=True)
class ScenarioEvent:
    time: float
    action: str
    name: str
    obstacle: Optional[ObstacleSpec] = None

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioEvent":
        action = data["action"]
        if action not in EVENT_ACTIONS:
            raise ConfigError(f"Unknown event action {action!r}")
        obstacle = ObstacleSpec.from_dict(data["obstacle"]) if "obstacle" in data else None
        if action != "remove" and obstacle is None:
            raise ConfigError(f"Event {action!r} at t={data['time']} needs an obstacle")
        name = obstacle.name if obstacle else data["name"]
        return cls(float(data["time"]), action, name, obstacle)


def look_at_quaternion(position, target) -> np.ndarray:
    """Camera orientation with z towards target, x right and y down."""
    z = np.asarray(target, dtype=float) - np.asarray(position, dtype=float)
    z /= np.linalg.norm(z)
    up = np.array([0.0, 0.0, 1.0]) if abs(z[2]) < 0.99 else np.array([0.0, 1.0, 0.0])
    x = np.cross(z, up)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return matrix_to_quat(np.column_stack([x, y, z]))


def _pose(data: Optional[dict]) -> Pose:
    data = data or {}
    return Pose.from_xyz_rpy(data.get("xyz", (0.0, 0.0, 0.0)), data.get("rpy", (0.0, 0.0, 0.0)))


@dataclass
class ScenarioConfig:
    """A scripted world, the two-arm system and the task, loaded from JSON."""

    name: str
    seed: int
    system: ClosedChainSystem
    start_joints: tuple  # (q1, q2) guesses, projected onto the closed chain
    target_joints: tuple
    obstacles: list = field(default_factory=list)  # ObstacleSpec
    cameras: list = field(default_factory=list)  # CameraSpec
    eye_in_hand: Optional[dict] = None  # CameraModel keyword arguments
    events: list = field(default_factory=list)  # ScenarioEvent, sorted by time
    estimate_offset: tuple = (0.0, 0.0, 0.0)
    settings: dict = field(default_factory=dict)
    max_steps: int = 150
    description: str = ""
    source: Optional[Path] = None

    @classmethod
    def from_dict(cls, data: dict, source: Optional[Path] = None) -> "ScenarioConfig":
        label = source or "scenario"
        version = data.get("format_version")
        if version != SCENARIO_FORMAT_VERSION:
            raise ConfigError(f"{label}: unsupported format_version {version}")
        if not isinstance(data.get("seed"), int):
            raise ConfigError(f"{label}: an integer 'seed' is required")
        try:
            layout = data["system"]
            robots = tuple(load_robot_model(name) for name in layout["robots"])
            if len(robots) != 2:
                raise ConfigError(f"{label}: exactly two robots are required")
            system = ClosedChainSystem(
                robots=robots,
                base_poses=tuple(_pose(p) for p in layout["bases"]),
                grasp_transforms=tuple(_pose(p) for p in layout["grasps"]),
                payload_spheres=tuple(
                    (tuple(s["center"]), float(s["radius"])) for s in layout.get("payload_spheres", ())
                ),
            )
            events = sorted((ScenarioEvent.from_dict(e) for e in data.get("events", ())), key=lambda e: e.time)
            return cls(
                name=data["name"],
                seed=data["seed"],
                system=system,
                start_joints=(np.array(data["start"]["q1"], dtype=float), np.array(data["start"]["q2"], dtype=float)),
                target_joints=(np.array(data["target"]["q1"], dtype=float), np.array(data["target"]["q2"], dtype=float)),
                obstacles=[ObstacleSpec.from_dict(o) for o in data.get("obstacles", ())],
                cameras=[CameraSpec.from_dict(c) for c in data.get("cameras", ())],
                eye_in_hand=data.get("eye_in_hand"),
                events=events,
                estimate_offset=tuple(data.get("estimate_offset", (0.0, 0.0, 0.0))),
                settings=dict(data.get("settings", {})),
                max_steps=int(data.get("max_steps", 150)),
                description=data.get("description", ""),
                source=source,
            )
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"{label}: malformed scenario: {e}")

    @classmethod
    def load(cls, path: Path) -> "ScenarioConfig":
        path = Path(path)
        if not path.exists() and (SCENARIOS_DIR / path).exists():
            path = SCENARIOS_DIR / path
        try:
            with open(path, "r", encoding="utf-8") as f:
                data = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"Cannot read scenario {path}: {e}")
        return cls.from_dict(data, path)

    def start_state(self) -> SystemState:
        q1, q2 = solve_closed_chain(self.system, *self.start_joints)
        return state_from_joints(self.system, q1, q2)

    def target_state(self) -> SystemState:
        q1, q2 = solve_closed_chain(self.system, *self.target_joints)
        return state_from_joints(self.system, q1, q2)

    def initial_estimate(self, target: Pose) -> Pose:
        return Pose(target.position + np.asarray(self.estimate_offset, dtype=float), target.orientation)

    @property
    def event_names(self) -> set:
        return {e.name for e in self.events}

    def world_at(self, time: float, d_safe: float = 0.0) -> GeometricWorld:
        """Ground-truth world after every event up to `time`; scripted obstacles get `d_safe`."""
        world = GeometricWorld(tuple(o.obstacle() for o in self.obstacles))
        for event in self.events:
            if event.time > time + 1e-9:
                break
            world = world.without(event.name)
            if event.action != "remove":
                world = world.with_obstacle(event.obstacle.obstacle(d_safe))
        return world

    def static_cameras(self) -> list[CameraModel]:
        return [c.camera() for c in self.cameras]


# --- detectors -----------------------------------------------------------------


def _training_samples(model, config: Config, rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(model.q_min, model.q_max, size=(int(config.get("initial_samples")), model.joint_count))


def train_detectors(
    system: ClosedChainSystem,
    world: GeometricWorld,
    config: Config,
    rng: np.random.Generator,
    samples: Optional[dict] = None,
) -> dict:
    """Segmented detector per robot, trained on uniform joint samples (or the given ones)."""
    detectors = {}
    for index in (1, 2):
        model = system.assembly_model(index)
        X = samples[index] if samples else _training_samples(model, config, rng)
        detectors[index] = train_segmented(
            X,
            world,
            model,
            kernel_order=config.get("kernel_order"),
            workers=config.workers,
            static_budget=config.get("sv_budget_static"),
            dynamic_budget=config.get("sv_budget_dynamic"),
            kernel_sigma=config.get("kernel_sigma"),
        )
        logger.info(
            f"Robot {index}: {detectors[index].total_support} support points over "
            f"{len(detectors[index].supports)} groups"
        )
    return detectors


def detector_accuracy(detector: SegmentedDetector, world: GeometricWorld, Q: np.ndarray) -> float:
    truth = np.any(ground_truth_labels(world, detector.model, Q) > 0, axis=1)
    return float(np.mean(detector.predict(Q) == truth))


def detector_summary(
    system: ClosedChainSystem, world: GeometricWorld, config: Config, rng: np.random.Generator, test_samples: int = 2000
) -> tuple[dict, dict]:
    """Train segmented detectors and the whole-robot baseline; report sizes and held-out accuracy."""
    samples = {i: _training_samples(system.assembly_model(i), config, rng) for i in (1, 2)}
    detectors = train_detectors(system, world, config, rng, samples)
    summary = {}
    for index, detector in detectors.items():
        model = detector.model
        unified = train_unified(
            samples[index],
            world,
            model,
            kernel_order=config.get("kernel_order"),
            static_budget=config.get("sv_budget_static"),
            dynamic_budget=config.get("sv_budget_dynamic"),
            kernel_sigma=config.get("kernel_sigma"),
        )
        test = rng.uniform(model.q_min, model.q_max, size=(test_samples, model.joint_count))
        summary[f"robot{index}"] = {
            "segmented_support": {str(g): s.size for g, s in sorted(detector.supports.items())},
            "segmented_total": detector.total_support,
            "unified_total": unified.size,
            "accuracy": detector_accuracy(detector, world, test),
        }
    return detectors, summary


# --- run ---------------------------------------------------------------------


@dataclass
class StepRecord:
    step: int
    time: float
    mode: str
    status: str
    solve_time: float
    visibility: float
    eps_bound: float
    remaining: float
    min_distance: float
    intruder_distance: float
    chain_residual: float
    object_pose: list
    goal_pose: list
    done: bool


@dataclass
class AuditReport:
    rows: int = 0
    collisions: int = 0
    chain_violations: int = 0
    limit_violations: int = 0
    min_distance: float = float("inf")
    min_intruder_distance: float = float("inf")
    max_chain_residual: float = 0.0

    @property
    def ok(self) -> bool:
        return self.rows > 0 and not (self.collisions or self.chain_violations or self.limit_violations)


@dataclass
class RunReport:
    scenario: str
    seed: int
    records: list = field(default_factory=list)  # StepRecord per MPC step
    verdict: str = "timeout"
    audit: Optional[AuditReport] = None
    replanning_entries: int = 0
    refined_at: Optional[float] = None
    vis_threshold: float = 0.5
    d_safe: float = 0.15
    artifacts: list = field(default_factory=list)

    def to_dict(self) -> dict:
        def clean(value):
            if isinstance(value, float) and not np.isfinite(value):
                return None
            if isinstance(value, dict):
                return {k: clean(v) for k, v in value.items()}
            if isinstance(value, list):
                return [clean(v) for v in value]
            return value

        return clean(
            {
                "scenario": self.scenario,
                "seed": self.seed,
                "verdict": self.verdict,
                "replanning_entries": self.replanning_entries,
                "refined_at": self.refined_at,
                "vis_threshold": self.vis_threshold,
                "d_safe": self.d_safe,
                "audit": None if self.audit is None else {**asdict(self.audit), "ok": self.audit.ok},
                "records": [asdict(r) for r in self.records],
                "artifacts": [str(a) for a in self.artifacts],
            }
        )


def _distances(system: ClosedChainSystem, world: GeometricWorld, z: np.ndarray, names: set) -> tuple[float, float]:
    """Closest sphere-to-obstacle surface distance, over all obstacles and over scripted ones only."""
    spheres = system_spheres(system, SystemState.from_vector(system, z))
    if not world.obstacles:
        return float("inf"), float("inf")
    per_obstacle = {
        o.name: float(np.min(o.polytope.distance(spheres.centers) - spheres.radii)) for o in world.obstacles
    }
    scripted = [d for n, d in per_obstacle.items() if n in names]
    return min(per_obstacle.values()), (min(scripted) if scripted else float("inf"))


def _score_columns(detectors: dict) -> list[str]:
    return [f"score_r{i}_g{g}" for i, d in sorted(detectors.items()) for g in sorted(d.supports)]


def _group_scores(detectors: dict, system: ClosedChainSystem, z: np.ndarray) -> list[float]:
    q1, q2, _ = system.split_state(z)
    joints = {1: q1, 2: q2}
    return [
        float(np.max(score(d.supports[g], d.model, joints[i])))
        for i, d in sorted(detectors.items())
        for g in sorted(d.supports)
    ]


def _append_rows(
    table: TrajectoryTable,
    result: StepResult,
    scenario: ScenarioConfig,
    detectors: dict,
    dt: float,
) -> tuple[float, float]:
    """Oversample the executed segment of the step; returns its min distances."""
    plan, (s0, s1) = result.plan, result.segment
    system = scenario.system
    phases = np.linspace(s0, s1, OVERSAMPLE + 1)[1:]
    t0 = result.time - dt
    z, zd, zdd = plan.sample(phases)
    nearest, intruder = float("inf"), float("inf")
    for k, s in enumerate(phases):
        time = t0 + (s - s0) * plan.duration if s1 > s0 else result.time
        world = scenario.world_at(time)
        d_all, d_scripted = _distances(system, world, z[k], scenario.event_names)
        nearest, intruder = min(nearest, d_all), min(intruder, d_scripted)
        extra = _group_scores(detectors, system, z[k]) + [result.visibility, result.eps_bound, d_all, d_scripted]
        table.append(result.index, time, s, int(result.mode is Mode.REPLANNING), z[k], zd[k], zdd[k], extra)
    return nearest, intruder


def _perception_settings(config: Config, seed: int) -> PerceptionSettings:
    return PerceptionSettings(
        cluster_eps=config.get("cluster_eps"),
        cluster_min_pts=config.get("cluster_min_pts"),
        occlusion_extend=config.get("occlusion_extend"),
        sphere_inflation=config.get("sphere_inflation"),
        reassociate_distance=config.get("reassociate_distance"),
        workers=config.workers,
        seed=seed,
    )


def run_scenario(
    scenario: ScenarioConfig,
    output_dir: Optional[Path] = None,
    config_path: Optional[Path] = None,
    max_steps: Optional[int] = None,
    plots: bool = True,
) -> tuple[RunReport, TrajectoryTable]:
    """Capture, perceive, learn, plan and step until the goal or the step limit."""
    config = Config(config_path, overrides=scenario.settings)
    rng = np.random.default_rng(scenario.seed)
    system = scenario.system
    d_safe = config.get("d_safe")
    settings = _perception_settings(config, scenario.seed)
    eye_kwargs = scenario.eye_in_hand

    start = scenario.start_state()
    target = scenario.target_state()
    estimate = scenario.initial_estimate(target.x_obj)

    def frame(state: SystemState, time: float, history) -> PerceptionUpdate:
        cameras = scenario.static_cameras()
        if eye_kwargs is not None:
            cameras.append(eye_in_hand_camera(system.placed(1), state.q1, **eye_kwargs))
        occlusion = perceive_frame(
            scenario.world_at(time), cameras, system_spheres(system, state), history, settings, time
        )
        return PerceptionUpdate(occlusion, time)

    first = frame(start, 0.0, None)
    detectors = train_detectors(system, perceived_world(first.occlusion, [], d_safe), config, rng)

    report = RunReport(scenario.name, scenario.seed, vis_threshold=config.get("vis_threshold"), d_safe=d_safe)

    def refine_target() -> Optional[Pose]:
        report.refined_at = controller.loop.elapsed
        return target.x_obj

    controller = MpcController(
        system,
        config,
        start,
        estimate,
        detectors,
        rng,
        goal_hint=target.as_vector(),
        refine_target=refine_target,
    )
    controller.set_callbacks(
        on_status_change=lambda status: logger.info(f"[{scenario.name}] {status}"),
        on_error=lambda error: logger.error(f"[{scenario.name}] {error}"),
    )
    controller.post(first)

    def perceive(ctrl: MpcController) -> Optional[PerceptionUpdate]:
        if ctrl.loop.elapsed == 0.0:
            return None
        return frame(ctrl.loop.state, ctrl.loop.elapsed, ctrl.loop.occlusion)

    table = TrajectoryTable(
        system.joint_counts,
        extra_columns=_score_columns(detectors) + ["visibility", "eps_bound", "min_distance", "intruder_distance"],
    )
    dt = config.step_dt
    previous_mode = Mode.TASK

    def record(result: StepResult) -> None:
        nonlocal previous_mode
        nearest, intruder = _append_rows(table, result, scenario, controller.detectors, dt)
        q1, q2, _ = system.split_state(result.state)
        report.records.append(
            StepRecord(
                step=result.index,
                time=result.time,
                mode=result.mode.value,
                status=result.status.value,
                solve_time=result.solve_time,
                visibility=result.visibility,
                eps_bound=result.eps_bound,
                remaining=result.remaining,
                min_distance=nearest,
                intruder_distance=intruder,
                chain_residual=float(np.linalg.norm(chain_residual(system, q1, q2))),
                object_pose=system.split_state(result.state)[2].tolist(),
                goal_pose=result.goal.as_vector().tolist(),
                done=result.done,
            )
        )
        if result.mode is Mode.REPLANNING and previous_mode is Mode.TASK:
            report.replanning_entries += 1
        previous_mode = result.mode

    results = []
    for _ in range(max_steps or scenario.max_steps):
        update = perceive(controller)
        if update is not None:
            controller.post(update)
        result = controller.step()
        record(result)
        results.append(result)
        if result.done:
            break

    report.audit = audit_table(table, scenario, d_safe)
    done = bool(results) and results[-1].done
    report.verdict = "success" if done and report.audit.ok else ("violation" if not report.audit.ok else "timeout")
    logger.info(f"Scenario {scenario.name}: {report.verdict} after {len(results)} steps")

    if output_dir is not None:
        output_dir = Path(output_dir)
        save_trajectory_table(output_dir / "trajectory.csv", table)
        report.artifacts.append(output_dir / "trajectory.csv")
        if plots:
            report.artifacts.extend(emit_plots(table, output_dir, config.get("vis_threshold"), d_safe))
        report.artifacts.append(output_dir / "report.json")
        save_report(output_dir / "report.json", report.to_dict())
    return report, table


# --- audit -------------------------------------------------------------------


def audit_table(table: TrajectoryTable, scenario: ScenarioConfig, d_safe: float = 0.0) -> AuditReport:
    """Ground-truth collision, closed-chain and limit checks on every row.

    Scripted obstacles count as collided when closer than `d_safe`.
    """
    system = scenario.system
    if tuple(table.joint_counts) != tuple(system.joint_counts):
        raise FormatError(f"Table joint counts {table.joint_counts} do not match the scenario {system.joint_counts}")
    report = AuditReport(rows=len(table.rows))
    if not table.rows:
        return report
    r1, r2 = system.robots
    q_min = np.concatenate([r1.q_min, r2.q_min])
    q_max = np.concatenate([r1.q_max, r2.q_max])
    v_lim = np.concatenate([r1.v_limit, r2.v_limit])
    a_lim = np.concatenate([r1.a_limit, r2.a_limit])
    n = sum(system.joint_counts)
    Z, V, A = table.block(), table.block("d_"), table.block("dd_")
    names = scenario.event_names
    for time, z, v, a in zip(table.column("time"), Z, V, A):
        world = scenario.world_at(time)
        d_all, d_scripted = _distances(system, world, z, names)
        report.min_distance = min(report.min_distance, d_all)
        report.min_intruder_distance = min(report.min_intruder_distance, d_scripted)
        if d_all < 0.0 or d_scripted < d_safe:
            report.collisions += 1
        q1, q2, _ = system.split_state(z)
        residual = float(np.linalg.norm(chain_residual(system, q1, q2)))
        report.max_chain_residual = max(report.max_chain_residual, residual)
        if residual > CHAIN_TOLERANCE:
            report.chain_violations += 1
        q = z[:n]
        if (
            np.any(q < q_min - LIMIT_TOLERANCE)
            or np.any(q > q_max + LIMIT_TOLERANCE)
            or np.any(np.abs(v[:n]) > v_lim + LIMIT_TOLERANCE)
            or np.any(np.abs(a[:n]) > a_lim + LIMIT_TOLERANCE)
        ):
            report.limit_violations += 1
    logger.info(
        f"Audit: {report.rows} rows, {report.collisions} collisions, {report.chain_violations} chain and "
        f"{report.limit_violations} limit violations, min distance {report.min_distance:.3f} m"
    )
    return report


def replay_audit(trajectory_path: Path, scenario_path: Path) -> AuditReport:
    """Audit a saved trajectory table against the scenario it was run in."""
    scenario = ScenarioConfig.load(scenario_path)
    config = Config(overrides=scenario.settings)
    return audit_table(load_trajectory_table(trajectory_path), scenario, config.get("d_safe"))
