"""Tests for the shrinking-horizon loop and the MPC controller (faked solver)."""

import numpy as np
import pytest

from src.config import Config
from src.geometry import ConvexPolytope
from src.kinematics import Pose
from src.mpc import (
    MAX_FAILURES,
    Mode,
    MpcController,
    MpcLoopState,
    PerceptionUpdate,
    perceived_world,
    replanning_mode_enter,
    replanning_mode_exit,
    shrinking_horizon_step,
    sphere_distances,
    system_spheres,
)
from src.perception import OcclusionModel, PosedSpheres
from src.planner import PlannerProblem, PlannerSolution, SolveStatus


class FakeSolver:
    """Stands in for the NLP solver: holds the start state for a fixed duration."""

    def __init__(self, statuses=(SolveStatus.OPTIMAL,), duration=2.0):
        self.statuses = list(statuses)
        self.duration = duration
        self.calls = 0

    def __call__(self, nlp, warm_start=None, settings=None):
        status = self.statuses[min(self.calls, len(self.statuses) - 1)]
        self.calls += 1
        problem = nlp.problem
        return PlannerSolution(
            control_points=np.tile(nlp.start_vector(), (nlp.M, 1)),
            duration=float(np.clip(self.duration, problem.t_min, problem.t_max)),
            slack=np.zeros(7),
            status=status,
            knot_vector=nlp.knot_vector,
            system=nlp.system,
        )


def make_loop(start_state, **kwargs):
    kwargs.setdefault("goal", Pose([0.9, 0.8, 0.0]))
    kwargs.setdefault("remaining", 5.0)
    kwargs.setdefault("eps_max", np.zeros(7))
    return MpcLoopState(state=start_state, **kwargs)


def make_problem(system, loop, t_max=5.0):
    return PlannerProblem(
        system=system,
        x_obj_initial=loop.state.x_obj,
        x_obj_final=loop.goal,
        start_state=loop.state.as_vector(),
        control_points=6,
        collocation_points=8,
        t_min=min(0.5, t_max),
        t_max=t_max,
    )


def make_controller(system, start_state, **overrides):
    config = Config(overrides={"t_max": 8.0, **overrides})
    return MpcController(system, config, start_state, start_state.x_obj, {}, np.random.default_rng(0))


def test_sphere_distances():
    spheres = PosedSpheres(np.array([[0.0, 0.0, 0.0], [3.0, 0.0, 0.0]]), np.array([1.0, 0.5]))
    d = sphere_distances(spheres, np.array([[2.0, 0.0, 0.0], [0.0, 0.0, 0.0]]))
    assert np.allclose(d, [0.5, -1.0])
    assert np.isinf(sphere_distances(PosedSpheres.empty(), np.zeros(3))[0])


def test_system_spheres_cover_both_arms_and_payload(planar_system, start_state):
    spheres = system_spheres(planar_system, start_state)
    expected = len(planar_system.assembly_model(1).collision_spheres) + len(planar_system.placed(2).collision_spheres)
    assert len(spheres.radii) == expected
    # the payload sphere sits on the object
    assert np.min(np.linalg.norm(spheres.centers - start_state.x_obj.position, axis=1)) < 1e-4


def test_perceived_world_pads_dynamic_hulls():
    hulls = (ConvexPolytope.box((1.0, 0.0, 0.0), (0.2, 0.2, 0.2)), ConvexPolytope.box((0.0, 1.0, 0.0), (0.2, 0.2, 0.2)))
    world = perceived_world(OcclusionModel(obstacle_hulls=hulls), [1], d_safe=0.15)
    assert [o.clearance for o in world.obstacles] == [0.0, 0.15]
    assert world.find("hull1") is not None


def test_replanning_enter_holds_current_pose(start_state):
    loop = make_loop(start_state)
    slack = np.full(7, 0.3)
    held = replanning_mode_enter(loop, slack)
    assert held.mode is Mode.REPLANNING
    assert np.allclose(held.goal.position, start_state.x_obj.position)
    assert np.allclose(held.eps_max, slack)
    assert held.saved_goal is loop.goal
    assert held.solution is None
    assert replanning_mode_enter(held, slack) is held


def test_replanning_exit_restores_task(start_state):
    loop = make_loop(start_state)
    held = replanning_mode_enter(loop, np.full(7, 0.3))
    resumed = replanning_mode_exit(held, t_max=12.0)
    assert resumed.mode is Mode.TASK
    assert resumed.goal is loop.goal
    assert np.allclose(resumed.eps_max, 0.0)
    assert resumed.remaining == 12.0
    assert resumed.saved_goal is None
    assert replanning_mode_exit(resumed, 12.0) is resumed


def test_step_executes_dt_of_new_plan(planar_system, start_state, monkeypatch):
    monkeypatch.setattr("src.mpc.solve", FakeSolver(duration=2.0))
    loop = make_loop(start_state)
    solution, updated = shrinking_horizon_step(loop, make_problem(planar_system, loop), dt=0.1)
    assert updated.solution is solution
    assert updated.executed_phase == pytest.approx(0.05)
    assert updated.remaining == pytest.approx(1.9)
    assert updated.elapsed == pytest.approx(0.1)
    assert len(updated.log) == 1
    assert not updated.done


def test_failed_solve_keeps_previous_plan(planar_system, start_state, monkeypatch):
    monkeypatch.setattr("src.mpc.solve", FakeSolver(duration=2.0))
    loop = make_loop(start_state)
    _, loop = shrinking_horizon_step(loop, make_problem(planar_system, loop), dt=0.1)
    kept = loop.solution

    monkeypatch.setattr("src.mpc.solve", FakeSolver([SolveStatus.INFEASIBLE], duration=1.0))
    solution, after = shrinking_horizon_step(loop, make_problem(planar_system, loop), dt=0.1)
    assert solution.status is SolveStatus.INFEASIBLE
    assert after.solution is kept
    assert after.executed_phase == pytest.approx(0.1)
    assert after.remaining == pytest.approx(1.8)


def test_remaining_shrinks_until_done(planar_system, start_state, monkeypatch):
    monkeypatch.setattr("src.mpc.solve", FakeSolver(duration=0.5))
    loop = make_loop(start_state, remaining=0.5)
    remaining = [loop.remaining]
    for _ in range(20):
        _, loop = shrinking_horizon_step(loop, make_problem(planar_system, loop, t_max=max(loop.remaining, 1e-3)), dt=0.1)
        remaining.append(loop.remaining)
        if loop.done:
            break
    assert loop.done
    assert all(b <= a + 1e-12 for a, b in zip(remaining, remaining[1:]))


def test_mailbox_keeps_latest(planar_system, start_state):
    controller = make_controller(planar_system, start_state)
    for t in (0.0, 0.1, 0.2):
        controller.post(PerceptionUpdate(OcclusionModel(), timestamp=t))
    assert controller._read_mailbox().timestamp == 0.2
    assert controller._read_mailbox() is None


def test_controller_step_reports(planar_system, start_state, monkeypatch):
    monkeypatch.setattr("src.mpc.solve", FakeSolver())
    controller = make_controller(planar_system, start_state)
    results = []
    controller.set_callbacks(on_step=results.append)
    result = controller.step()
    assert len(results) == 1 and results[0] is result
    assert result.index == 1
    assert result.mode is Mode.TASK
    assert result.status is SolveStatus.OPTIMAL
    assert set(result.references) == {"q1", "q2", "qd1", "qd2", "qdd1", "qdd2"}
    assert result.segment == (0.0, pytest.approx(controller.loop.executed_phase))


def test_callback_errors_do_not_stop_the_loop(planar_system, start_state, monkeypatch):
    monkeypatch.setattr("src.mpc.solve", FakeSolver())

    def broken(_):
        raise RuntimeError("display gone")

    controller = make_controller(planar_system, start_state)
    controller.set_callbacks(on_status_change=broken, on_error=broken, on_step=broken)
    assert controller.step().index == 1


def test_repeated_failures_fire_error_callback(planar_system, start_state, monkeypatch):
    monkeypatch.setattr("src.mpc.solve", FakeSolver([SolveStatus.MAX_ITER]))
    controller = make_controller(planar_system, start_state)
    errors = []
    controller.set_callbacks(on_error=errors.append)
    for _ in range(MAX_FAILURES - 1):
        controller.step()
    assert errors == []
    controller.step()
    assert len(errors) == 1


def test_intruder_enters_and_leaves_replanning(planar_system, start_state, monkeypatch):
    monkeypatch.setattr("src.mpc.solve", FakeSolver())
    controller = make_controller(planar_system, start_state)
    statuses = []
    controller.set_callbacks(on_status_change=statuses.append)

    controller.post(PerceptionUpdate(OcclusionModel(), timestamp=0.0))
    assert controller.step().mode is Mode.TASK

    near = controller.robot_spheres().centers[0]
    intruder = ConvexPolytope.box(near, (0.1, 0.1, 0.1))
    controller.post(PerceptionUpdate(OcclusionModel(obstacle_hulls=(intruder,)), timestamp=0.1))
    result = controller.step()
    assert result.mode is Mode.REPLANNING
    assert result.eps_bound == pytest.approx(0.3)
    assert statuses[-1] == "Replanning: intruder nearby"

    controller.post(PerceptionUpdate(OcclusionModel(), timestamp=0.2))
    assert controller.step().mode is Mode.TASK
    assert statuses[-1] == "Task resumed"
