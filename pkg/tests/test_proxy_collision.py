"""Tests for the segmented collision proxy and the geometric oracle."""

import numpy as np
import pytest

from src.config import Config
from src.errors import DimensionError, EmptySupportSetError, SamplerExhaustedError
from src.geometry import ConvexPolytope, GeometricWorld, Obstacle
from src.kinematics import load_robot_model, point_positions
from src.proxy_collision import (
    MIN_MARGIN,
    SV_BUDGET_DYNAMIC,
    SV_BUDGET_STATIC,
    BiasedSampler,
    LabeledDataset,
    SupportSet,
    default_budget,
    fk_kernel,
    fk_similarity,
    gram_prune,
    ground_truth_collision,
    ground_truth_labels,
    grid_configurations,
    polyharmonic_kernel,
    score,
    score_batch,
    score_gradient,
    train,
    train_segmented,
    train_unified,
    update_detector,
)


def make_world(*boxes):
    return GeometricWorld(
        tuple(Obstacle(ConvexPolytope.box(c, s), name=f"box{i}") for i, (c, s) in enumerate(boxes))
    )


BOX = ((1.0, 0.8, 0.0), (0.4, 0.4, 0.4))
SECOND_BOX = ((-0.8, -0.9, 0.0), (0.4, 0.4, 0.4))


def accuracy(detector, world, Q):
    truth = np.any(ground_truth_labels(world, detector.model, Q) > 0, axis=1)
    return float(np.mean(detector.predict(Q) == truth))


@pytest.fixture(scope="module")
def benchmark():
    """64 x 64 oracle-labelled grid, 80/20 split, and a detector trained on the 80%."""
    model = load_robot_model("planar_2link.json")
    world = make_world(BOX)
    X = grid_configurations(model, 64)
    order = np.random.default_rng(3).permutation(len(X))
    cut = int(0.8 * len(X))
    train_X, test_X = X[order[:cut]], X[order[cut:]]
    detector = train_segmented(train_X, world, model)
    return model, world, train_X, test_X, detector


# --- kernels -------------------------------------------------------------------


def test_polyharmonic_kernel_values():
    assert polyharmonic_kernel([1.0, 2.0], [1.0, 2.0], k=1) == 0.0
    assert polyharmonic_kernel([0.0, 0.0], [3.0, 4.0], k=1) == pytest.approx(5.0)
    assert polyharmonic_kernel([0.0], [1.0], k=2) == pytest.approx(0.0)
    assert polyharmonic_kernel([0.0], [0.0], k=2) == 0.0


def test_polyharmonic_kernel_order_must_be_positive():
    with pytest.raises(DimensionError):
        polyharmonic_kernel([0.0], [1.0], k=0)


def test_fk_kernel_symmetric_and_zero_on_diagonal(planar_model, rng):
    for _ in range(5):
        a, b = rng.uniform(-3.0, 3.0, size=(2, 2))
        assert fk_kernel(planar_model, 1, a, b) == pytest.approx(fk_kernel(planar_model, 1, b, a), abs=1e-12)
        assert fk_kernel(planar_model, None, a, a) == 0.0


def test_fk_kernel_is_mean_control_point_distance(planar_model, rng):
    a, b = rng.uniform(-3.0, 3.0, size=(2, 2))
    points = planar_model.fk_control_points
    pa = point_positions(planar_model, a[None, :], points)[0]
    pb = point_positions(planar_model, b[None, :], points)[0]
    expected = np.mean(np.linalg.norm(pa - pb, axis=1))
    assert fk_kernel(planar_model, None, a, b) == pytest.approx(expected, abs=1e-12)


def test_mirror_configurations_similarity_pattern(planar_model):
    straight = np.array([0.0, 0.0])
    up = np.array([0.5, 0.0])
    down = np.array([-0.5, 0.0])
    s12 = fk_similarity(planar_model, None, straight, up)
    s13 = fk_similarity(planar_model, None, straight, down)
    s23 = fk_similarity(planar_model, None, up, down)
    assert s12 == pytest.approx(s13, abs=1e-12)
    assert s12 > s23
    assert fk_similarity(planar_model, None, up, up) == pytest.approx(1.0)


# --- training and scoring ------------------------------------------------------


def test_labels_must_be_signed():
    with pytest.raises(DimensionError):
        LabeledDataset(np.zeros((2, 2)), np.array([1.0, 0.0]))


def test_two_point_toy_set_separates(planar_model):
    X = np.array([[0.0, 0.0], [2.0, 1.0]])
    support = train(LabeledDataset(X, np.array([1.0, -1.0])), planar_model, 1)
    scores = score_batch(support, planar_model, X)[:, 0]
    assert scores[0] > 0 and scores[1] < 0
    assert support.violations == 0


def test_one_class_set_scores_free(planar_model, rng):
    X = rng.uniform(-3.0, 3.0, size=(30, 2))
    support = train(LabeledDataset(X, -np.ones(30)), planar_model, 0)
    assert support.size == 0
    assert support.violations == 0
    assert np.allclose(support.bias, [-1.0])
    assert np.allclose(score_batch(support, planar_model, X), -1.0)
    values, grads = score_gradient(support, planar_model, X[:4])
    assert np.allclose(values, -1.0)
    assert grads.shape == (4, 1, 2) and not grads.any()


def test_empty_support_arrays_build(planar_model):
    support = SupportSet.build(planar_model, 0, np.zeros((0, 2)), np.zeros((0, 1)), [-1.0], np.zeros((0, 1)))
    assert support.size == 0
    assert support.weights.shape == (0, 1)
    assert support.labels.shape == (0, 1)
    assert support.support_points.shape == (0, 1, 3)


def test_empty_world_trains_all_free_groups(planar_model, empty_world):
    X = grid_configurations(planar_model, 12)
    detector = train_segmented(X, empty_world, planar_model)
    assert set(detector.supports) == set(planar_model.groups)
    assert detector.total_support == 0
    assert not detector.predict(X).any()
    for support in detector.supports.values():
        assert np.allclose(support.bias, -1.0)


def test_single_support_vector_scores_its_weight(planar_model):
    q = np.array([0.3, -0.4])
    support = SupportSet.build(planar_model, 1, q[None, :], [[1.0]], [0.0], [[1.0]])
    assert fk_kernel(planar_model, 1, q, q) == 0.0
    assert score(support, planar_model, q)[0] == pytest.approx(1.0)
    far = score(support, planar_model, np.array([-2.7, 0.0]))[0]
    assert 0.0 < far < 1e-3


def test_violator_next_to_a_support_vector_reuses_it(planar_model):
    # group 0 only sees the link-0 angle; rows 0 and 2 are almost the same configuration
    X = np.array([[0.0, 0.0], [0.2, 0.0], [0.03, 0.0]])
    Y = np.array([1.0, -1.0, 1.0])
    support = train(LabeledDataset(X, Y), planar_model, 0, sv_budget=10)
    assert support.size == 2
    assert np.allclose(support.support, X[:2])
    assert support.weights[0, 0] > 2.0
    assert support.violations == 0
    margins = Y * score_batch(support, planar_model, X)[:, 0]
    assert np.all(margins >= MIN_MARGIN - 1e-9)


def test_training_stops_at_the_support_budget(benchmark):
    model, world, train_X, _, _ = benchmark
    labels = ground_truth_labels(world, model, train_X, 1)
    support = train(LabeledDataset(train_X, labels), model, 1, sv_budget=5, max_updates=500)
    assert 0 < support.size <= 5
    assert support.violations > 0


def test_untrained_support_set_raises(planar_model):
    empty = SupportSet(
        support=np.zeros((0, 2)),
        weights=np.zeros((0, 1)),
        bias=np.zeros(0),
        labels=np.zeros((0, 1)),
        control_points=tuple(planar_model.fk_control_points),
        group=None,
    )
    with pytest.raises(EmptySupportSetError):
        score(empty, planar_model, np.zeros(2))


def test_score_gradient_matches_finite_differences(benchmark):
    model, _, _, _, detector = benchmark
    support = detector.supports[1]
    q = np.array([0.37, -1.21])
    values, grads = score_gradient(support, model, q[None, :])
    assert np.allclose(values[0], score(support, model, q))
    h = 1e-6
    for j in range(2):
        dq = np.zeros(2)
        dq[j] = h
        numeric = (score(support, model, q + dq) - score(support, model, q - dq)) / (2 * h)
        assert grads[0, 0, j] == pytest.approx(numeric[0], rel=1e-4, abs=1e-6)


def test_default_budget_favours_end_effector_group(planar_model):
    assert default_budget(planar_model, 1) == SV_BUDGET_DYNAMIC
    assert default_budget(planar_model, 0) == SV_BUDGET_STATIC
    assert default_budget(planar_model, None) == SV_BUDGET_STATIC + SV_BUDGET_DYNAMIC


def test_grid_accuracy(benchmark):
    _, world, _, test_X, detector = benchmark
    assert accuracy(detector, world, test_X) >= 0.95
    for support in detector.supports.values():
        assert np.all(np.any(np.abs(support.weights) > 0, axis=1))


def test_scores_are_finite_over_the_limits(benchmark):
    model, _, _, _, detector = benchmark
    Q = grid_configurations(model, 15)
    for support in detector.supports.values():
        assert np.all(np.isfinite(score_batch(support, model, Q)))


def test_groups_only_use_their_own_control_points(benchmark):
    model, _, _, _, detector = benchmark
    for group, support in detector.supports.items():
        assert set(support.control_points) == set(model.group_control_points(group))


# --- pruning -------------------------------------------------------------------


def test_gram_prune_removes_duplicate(planar_model):
    X = np.array([[0.2, 0.1], [0.2, 0.1], [2.0, -1.0]])
    support = SupportSet.build(planar_model, None, X, [[1.0], [1.0], [-1.0]], [0.0], [[1.0], [1.0], [-1.0]])
    pruned = gram_prune(support)
    assert pruned.size == 2
    assert len(np.unique(pruned.support, axis=0)) == 2
    assert pruned.weights[0, 0] == pytest.approx(2.0)
    Q = np.array([[0.2, 0.1], [1.0, 1.0], [2.0, -1.0]])
    assert np.allclose(score_batch(pruned, planar_model, Q), score_batch(support, planar_model, Q))


def test_gram_prune_infinite_thresholds_is_a_no_op(benchmark):
    detector = benchmark[4]
    support = detector.supports[1]
    assert gram_prune(support, np.inf, np.inf) is support


def test_gram_prune_keeps_accuracy(benchmark):
    _, world, _, test_X, detector = benchmark
    settings = Config().gram_settings()
    before = accuracy(detector, world, test_X)
    pruned = type(detector)(
        detector.model,
        {
            g: gram_prune(s, settings["threshold_free"], settings["threshold_collision"], settings["gram_sigma"])
            for g, s in detector.supports.items()
        },
    )
    assert pruned.total_support < detector.total_support
    assert accuracy(pruned, world, test_X) >= before - 0.02


# --- segmented against unified -------------------------------------------------


def test_segmented_needs_no_more_support_than_unified(benchmark):
    model, world, train_X, test_X, detector = benchmark
    unified = train_unified(train_X, world, model)
    truth = np.any(ground_truth_labels(world, model, test_X) > 0, axis=1)
    unified_accuracy = float(np.mean(np.any(score_batch(unified, model, test_X) > 0, axis=1) == truth))
    assert detector.total_support <= unified.size
    assert accuracy(detector, world, test_X) >= unified_accuracy - 0.02


# --- oracle --------------------------------------------------------------------


def test_oracle_empty_world_is_free(planar_model, empty_world):
    hits = ground_truth_collision(empty_world, planar_model, np.zeros(2))
    assert not any(v.any() for v in hits.values())


def test_oracle_sphere_inside_obstacle_collides(planar_model, block_world):
    hits = ground_truth_collision(block_world, planar_model, np.zeros(2))
    assert hits[1].all()


# --- active learning -----------------------------------------------------------


def test_biased_sampler_stays_in_limits(planar_model, rng):
    sampler = BiasedSampler(planar_model.q_min, planar_model.q_max, rng, bias=0.5, sigma=0.1)
    uniform = sampler(50)
    assert uniform.shape == (50, 2)
    sampler.record(np.array([[0.5, 0.5]]))
    mixed = sampler(40)
    assert np.all(mixed >= planar_model.q_min) and np.all(mixed <= planar_model.q_max)
    near = np.linalg.norm(mixed[:20] - [0.5, 0.5], axis=1)
    assert np.median(near) < 0.5


def test_exhausted_sampler_falls_back_to_exploitation(benchmark):
    _, world, _, _, detector = benchmark
    unbounded = BiasedSampler(np.full(2, -np.inf), np.full(2, np.inf), np.random.default_rng(4))
    with pytest.raises(SamplerExhaustedError):
        unbounded(10)
    updated = update_detector(detector, world, unbounded, np.random.default_rng(4))
    assert set(updated.supports) == set(detector.supports)
    assert updated.total_support > 0


def test_update_on_unchanged_world_keeps_accuracy(benchmark):
    model, world, _, test_X, detector = benchmark
    rng = np.random.default_rng(5)
    sampler = BiasedSampler(model.q_min, model.q_max, rng)
    before = accuracy(detector, world, test_X)
    updated = update_detector(detector, world, sampler, rng)
    assert accuracy(updated, world, test_X) >= before - 0.02


def test_repeated_updates_keep_weights_bounded(benchmark):
    model, world, _, _, detector = benchmark
    rng = np.random.default_rng(6)
    sampler = BiasedSampler(model.q_min, model.q_max, rng)
    for _ in range(50):
        detector = update_detector(detector, world, sampler, rng, explore_samples=100)
        for support in detector.supports.values():
            assert np.all(np.isfinite(support.weights))
            assert np.max(np.abs(support.weights), initial=0.0) < 1e6
            assert support.size <= support.sv_budget


def test_inserted_obstacle_is_learned(benchmark):
    model, _, _, _, detector = benchmark
    changed = make_world(BOX, SECOND_BOX)
    rng = np.random.default_rng(8)
    sampler = BiasedSampler(model.q_min, model.q_max, rng)
    fresh = grid_configurations(model, 40)
    for _ in range(3):
        detector = update_detector(detector, changed, sampler, rng)
        if accuracy(detector, changed, fresh) >= 0.90:
            break
    assert accuracy(detector, changed, fresh) >= 0.90
