"""Tests for the synthetic camera pipeline and occlusion bookkeeping."""

import numpy as np
import pytest

from src.errors import CameraInsideSphereError, DimensionError
from src.geometry import ConvexPolytope, GeometricWorld, Obstacle
from src.kinematics import Pose
from src.perception import (
    CameraModel,
    OcclusionModel,
    PerceptionSettings,
    PointCloud,
    PosedSpheres,
    camera_model,
    cluster_to_hulls,
    dynamic_occlusion_cones,
    eye_in_hand_camera,
    filter_robot_points,
    fuse_cameras,
    integrate_occlusions,
    occlusion_polytope,
    perceive_frame,
    synthetic_depth_capture,
)
from src.scenario import look_at_quaternion


def make_camera(position=(0.0, 0.0, 0.0), look_at=(1.0, 0.0, 0.0), name="front", **kwargs):
    kwargs.setdefault("resolution", (48, 64))
    return CameraModel(
        pose=Pose(np.asarray(position, dtype=float), look_at_quaternion(position, look_at)),
        fov_h=1.0,
        fov_v=1.0,
        name=name,
        **kwargs,
    )


def box_world(center=(1.75, 0.0, 0.0), size=(0.5, 0.6, 0.6)):
    return GeometricWorld((Obstacle(ConvexPolytope.box(center, size), name="box"),))


def test_camera_axis_and_frustum():
    camera = make_camera()
    assert np.allclose(camera.optical_axis, [1.0, 0.0, 0.0])
    inside = camera.in_frustum(np.array([[2.0, 0.0, 0.0], [-2.0, 0.0, 0.0], [5.0, 0.0, 0.0]]))
    assert inside.tolist() == [True, False, False]


def test_camera_rejects_bad_field_of_view():
    with pytest.raises(DimensionError):
        CameraModel(pose=Pose.identity(), fov_h=4.0, fov_v=1.0)


def test_point_cloud_rejects_non_finite():
    with pytest.raises(DimensionError):
        PointCloud(np.array([[0.0, np.nan, 1.0]]))


def test_capture_hits_front_face():
    cloud = synthetic_depth_capture(box_world(), make_camera())
    assert len(cloud) > 0
    assert np.allclose(cloud.points[:, 0], 1.5, atol=1e-9)
    assert cloud.source == "front"


def test_capture_sees_robot_spheres():
    spheres = PosedSpheres(np.array([[1.0, 0.0, 0.0]]), np.array([0.2]))
    cloud = synthetic_depth_capture(box_world(), make_camera(), spheres)
    assert np.min(cloud.points[:, 0]) < 1.0


def test_filter_robot_points():
    spheres = PosedSpheres(np.array([[0.0, 0.0, 0.0]]), np.array([1.0]))
    cloud = PointCloud(np.array([[0.5, 0.0, 0.0], [1.05, 0.0, 0.0], [3.0, 0.0, 0.0]]))
    kept = filter_robot_points(cloud, spheres, inflation=1.1)
    assert np.allclose(kept.points, [[3.0, 0.0, 0.0]])


def test_cluster_to_hulls_separates_blobs(rng):
    blob_a = rng.normal([0.0, 0.0, 0.0], 0.01, size=(40, 3))
    blob_b = rng.normal([1.0, 0.0, 0.0], 0.01, size=(40, 3))
    hulls = cluster_to_hulls(PointCloud(np.vstack([blob_a, blob_b])))
    assert len(hulls) == 2
    centroids = sorted(h.centroid[0] for h in hulls)
    assert centroids[0] == pytest.approx(0.0, abs=0.05)
    assert centroids[1] == pytest.approx(1.0, abs=0.05)


def test_cluster_to_hulls_edge_cases():
    assert cluster_to_hulls(PointCloud(np.zeros((3, 3)))) == []
    with pytest.raises(DimensionError):
        cluster_to_hulls(PointCloud(np.zeros((10, 3))), eps=0.0)


def test_cone_half_angle():
    camera = make_camera()
    spheres = PosedSpheres(np.array([[2.0, 0.0, 0.0]]), np.array([1.0]))
    (cone,) = dynamic_occlusion_cones(spheres, camera)
    assert cone.half_angle == pytest.approx(np.pi / 6)
    assert cone.depth == pytest.approx(np.sqrt(3.0))
    assert cone.contains(np.array([4.0, 0.0, 0.0]))[0]
    assert not cone.contains(np.array([0.5, 0.0, 0.0]))[0]
    assert not cone.contains(np.array([2.0, 2.0, 0.0]))[0]


def test_camera_inside_sphere_raises():
    spheres = PosedSpheres(np.array([[0.1, 0.0, 0.0]]), np.array([0.5]))
    with pytest.raises(CameraInsideSphereError):
        dynamic_occlusion_cones(spheres, make_camera())


def test_occlusion_polytope_covers_shadow():
    hull = ConvexPolytope.box((1.5, 0.0, 0.0), (0.02, 0.6, 0.6))
    shadow = occlusion_polytope(hull, make_camera(), extend=1.0)
    assert shadow is not None
    assert shadow.contains(np.array([[2.2, 0.0, 0.0]]))[0]
    assert not shadow.contains(np.array([[1.0, 0.0, 0.0]]))[0]


def test_occlusion_polytope_behind_camera():
    hull = ConvexPolytope.box((-1.5, 0.0, 0.0), (0.2, 0.2, 0.2))
    assert occlusion_polytope(hull, make_camera()) is None


def test_ray_blocked_points_are_occluded(rng):
    camera = make_camera()
    model = camera_model(box_world(), camera, PosedSpheres.empty(), PerceptionSettings())
    assert len(model.obstacle_hulls) == 1
    # only rays that pass clearly through the face count
    core = ConvexPolytope.box((1.75, 0.0, 0.0), (0.5, 0.5, 0.5))
    points = rng.uniform([1.0, -0.35, -0.35], [2.3, 0.35, 0.35], size=(2000, 3))
    blocked = core.segment_intersects(np.zeros((len(points), 3)), points) & (points[:, 0] > 1.5)
    covered = model.occluded(points[blocked]) | model.occupied(points[blocked])
    assert blocked.sum() > 100
    assert covered.mean() >= 0.98
    # nothing in front of the face is hidden
    front = points[points[:, 0] < 1.45]
    assert not model.occluded(front).any()


def test_integrate_carries_only_unobserved_occlusions():
    camera = make_camera()
    out_of_view = ConvexPolytope.box((0.0, 5.0, 0.0), (0.4, 0.4, 0.4))
    in_view = ConvexPolytope.box((2.0, 0.0, 0.0), (0.4, 0.4, 0.4))
    history = OcclusionModel(
        obstacle_hulls=(out_of_view, in_view),
        occlusion_polytopes=(out_of_view, in_view),
        history=(0.0,),
    )
    current = OcclusionModel(cameras=(camera,), history=(1.0,))
    merged = integrate_occlusions(current, history)
    assert len(merged.occlusion_polytopes) == 1
    assert np.allclose(merged.occlusion_polytopes[0].centroid, [0.0, 5.0, 0.0])
    assert len(merged.obstacle_hulls) == 1
    assert merged.history == (0.0, 1.0)


def test_integrate_replaces_reobserved_hull():
    camera = make_camera()
    old = ConvexPolytope.box((2.0, 0.0, 0.0), (0.4, 0.4, 0.4))
    new = old.translated((0.05, 0.0, 0.0))
    history = OcclusionModel(obstacle_hulls=(old,), history=(0.0,))
    current = OcclusionModel(obstacle_hulls=(new,), cameras=(camera,), history=(1.0,))
    merged = integrate_occlusions(current, history, reassociate_distance=0.1)
    assert merged.obstacle_hulls == (new,)


def test_fuse_trims_occlusion_seen_free_elsewhere():
    front = make_camera()
    side = make_camera(position=(2.0, -2.0, 0.0), look_at=(2.0, 0.0, 0.0), name="side")
    hidden = ConvexPolytope.box((2.0, 0.0, 0.0), (0.3, 0.3, 0.3))
    a = OcclusionModel(occlusion_polytopes=(hidden,), cameras=(front,), history=(0.0,))
    b = OcclusionModel(cameras=(side,), history=(0.0,))
    fused = fuse_cameras([a, b])
    assert fused.occlusion_polytopes == ()
    assert len(fused.cameras) == 2


def test_perceive_frame_multi_camera():
    cameras = [make_camera(), make_camera(position=(1.75, -2.0, 0.0), look_at=(1.75, 0.0, 0.0), name="side")]
    model = perceive_frame(box_world(), cameras, PosedSpheres.empty(), timestamp=0.5)
    assert len(model.obstacle_hulls) >= 1
    assert model.history == (0.5,)
    # the box interior is either occupied or hidden
    assert (model.occupied(np.array([[1.75, 0.0, 0.0]])) | model.occluded(np.array([[1.75, 0.0, 0.0]])))[0]


def test_eye_in_hand_camera_follows_end_effector(planar_model):
    camera = eye_in_hand_camera(planar_model, np.zeros(2), fov_h=1.0, fov_v=0.8)
    assert np.allclose(camera.origin, [2.0, 0.0, 0.0])
    assert np.allclose(camera.optical_axis, [1.0, 0.0, 0.0], atol=1e-9)
    assert camera.name == "eye_in_hand"
