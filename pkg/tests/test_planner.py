"""Tests for the closed-chain optimal control problem and its solver."""

import numpy as np
import pytest

from src.errors import DimensionError
from src.kinematics import chain_residual, load_robot_model, solve_closed_chain, state_from_joints
from src.planner import (
    PlannerProblem,
    PlannerWeights,
    SolverSettings,
    SolveStatus,
    build_ocp,
    shifted_guess,
    slack_bound,
    solve,
)
from src.proxy_collision import SegmentedDetector, SupportSet

START_Q1 = np.array([2.0943951, -2.0943951])
START_Q2 = np.array([-2.0943951, 2.0943951])


def make_goal(system):
    q1, q2 = solve_closed_chain(system, START_Q1 + [0.3, -0.2], START_Q2)
    return state_from_joints(system, q1, q2)


def make_problem(system, start, **kwargs):
    goal = make_goal(system)
    kwargs.setdefault("control_points", 6)
    kwargs.setdefault("collocation_points", 8)
    kwargs.setdefault("t_max", 8.0)
    return PlannerProblem(
        system=system,
        x_obj_initial=start.x_obj,
        x_obj_final=goal.x_obj,
        start_state=start.as_vector(),
        goal_hint=goal.as_vector(),
        **kwargs,
    )


def hand_detector(system, index, rng):
    """Detector with a few random support vectors on every group."""
    model = system.assembly_model(index)
    supports = {}
    for group in model.groups:
        X = rng.uniform(-2.0, 2.0, size=(4, 2))
        supports[group] = SupportSet.build(model, group, X, rng.normal(size=(4, 1)), [-0.5], np.sign(rng.normal(size=(4, 1))))
    return SegmentedDetector(model, supports)


def finite_difference(fn, x, h=1e-6):
    base = np.atleast_1d(fn(x))
    out = np.zeros((base.size, x.size))
    for i in range(x.size):
        step = np.zeros_like(x)
        step[i] = h
        out[:, i] = (np.atleast_1d(fn(x + step)) - np.atleast_1d(fn(x - step))) / (2 * h)
    return out


def perturbed_guess(nlp, rng):
    x = nlp.initial_guess()
    x[: nlp.n_c] += rng.normal(0.0, 0.02, nlp.n_c)
    return x


def test_variable_count(planar_system, start_state):
    problem = make_problem(planar_system, start_state)
    nlp = build_ocp(problem)
    d = planar_system.state_dim
    assert d == 2 + 2 + 7
    assert problem.variable_count == 6 * d + 1 + 7
    assert nlp.variable_count == problem.variable_count
    assert len(nlp.bounds) == nlp.variable_count


def test_problem_validation(planar_system, start_state):
    with pytest.raises(DimensionError):
        make_problem(planar_system, start_state, t_min=2.0, t_max=1.0)
    with pytest.raises(DimensionError):
        make_problem(planar_system, start_state, eps_max=-np.ones(7))
    with pytest.raises(DimensionError):
        PlannerWeights(acc=-1.0)


def test_unpack_rejects_wrong_size(planar_system, start_state):
    nlp = build_ocp(make_problem(planar_system, start_state))
    with pytest.raises(DimensionError):
        nlp.unpack(np.zeros(nlp.variable_count - 1))


def test_slack_bound_layout():
    bound = slack_bound(0.3, 0.1)
    assert bound.shape == (7,)
    assert np.allclose(bound[:3], 0.3)
    assert np.allclose(bound[3:], 2 * np.sin(0.025))


def test_initial_guess_pins_start(planar_system, start_state):
    nlp = build_ocp(make_problem(planar_system, start_state))
    C, T, eps = nlp.unpack(nlp.initial_guess())
    assert np.allclose(C[0], start_state.as_vector())
    assert 0.5 <= T <= 8.0
    assert np.allclose(eps, 0.0)


def test_cost_gradient(planar_system, start_state, rng):
    nlp = build_ocp(make_problem(planar_system, start_state))
    x = perturbed_guess(nlp, rng)
    _, grad = nlp.cost(x)
    numeric = finite_difference(lambda v: nlp.cost(v)[0], x)[0]
    assert np.allclose(grad, numeric, rtol=1e-4, atol=1e-6)
    assert set(nlp.cost_terms(x)) == {"acceleration", "dexterity", "duration", "slack"}


def test_equality_jacobian(planar_system, start_state, rng):
    nlp = build_ocp(make_problem(planar_system, start_state))
    x = perturbed_guess(nlp, rng)
    _, jac = nlp.equalities(x)
    numeric = finite_difference(lambda v: nlp.equalities(v)[0], x)
    assert np.allclose(jac, numeric, atol=1e-5)


def test_inequality_jacobian_with_detectors(planar_system, start_state, rng):
    detectors = {i: hand_detector(planar_system, i, rng) for i in (1, 2)}
    nlp = build_ocp(make_problem(planar_system, start_state, detectors=detectors))
    x = perturbed_guess(nlp, rng)
    g, jac = nlp.inequalities(x)
    assert g.size > 0
    numeric = finite_difference(lambda v: nlp.inequalities(v)[0], x)
    assert np.allclose(jac, numeric, atol=1e-5)


def test_detector_joint_count_checked(planar_system, start_state):
    seven = SegmentedDetector(load_robot_model("fe_7dof.json"))
    with pytest.raises(DimensionError):
        build_ocp(make_problem(planar_system, start_state, detectors={1: seven}))


def test_solve_reaches_goal_on_the_chain(planar_system, start_state):
    problem = make_problem(planar_system, start_state, collocation_points=16)
    nlp = build_ocp(problem)
    solution = solve(nlp, settings=SolverSettings(max_outer=20, max_inner=150))
    assert solution.status.usable
    end = solution.control_points[-1]
    goal = problem.x_obj_final.as_vector()
    assert np.all(np.abs(end[4:7] - goal[:3]) <= problem.eps_max[:3] + 1e-3)
    assert problem.t_min <= solution.duration <= problem.t_max
    # closure between the collocation nodes, on a grid ten times finer
    for s in np.linspace(0.0, 1.0, 10 * problem.collocation_points + 1):
        z, _, _ = solution.sample(s)
        q1, q2, _ = planar_system.split_state(z)
        assert np.linalg.norm(chain_residual(planar_system, q1, q2)) <= 1e-3
    # control-point velocity bounds hold on the whole curve
    _, zd, _ = solution.sample(np.linspace(0.0, 1.0, 9))
    limit = np.concatenate([r.v_limit for r in planar_system.robots])
    assert np.all(np.abs(zd[:, :4]) <= limit + 1e-3)


def test_solution_references(planar_system, start_state):
    problem = make_problem(planar_system, start_state)
    nlp = build_ocp(problem)
    solution = solve(nlp, settings=SolverSettings(max_outer=2, max_inner=20))
    refs = solution.references(0.5)
    assert set(refs) == {"q1", "q2", "qd1", "qd2", "qdd1", "qdd2"}
    assert refs["q1"].shape == (2,)


def test_shifted_guess_reproduces_plan_at_zero_phase(planar_system, start_state):
    problem = make_problem(planar_system, start_state)
    nlp = build_ocp(problem)
    solution = solve(nlp, settings=SolverSettings(max_outer=2, max_inner=20))
    guess = shifted_guess(nlp, solution, 0.0, solution.duration)
    C, T, _ = nlp.unpack(guess)
    assert T == pytest.approx(solution.duration)
    assert np.allclose(C[0], start_state.as_vector())
    assert np.allclose(C[1:-1], solution.control_points[1:-1], atol=1e-6)


def test_status_usable():
    assert SolveStatus.OPTIMAL.usable and SolveStatus.FEASIBLE.usable
    assert not SolveStatus.MAX_ITER.usable and not SolveStatus.INFEASIBLE.usable
