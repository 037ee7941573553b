"""Tests for the on-disk formats: point clouds, support sets, candidates, tables, reports."""

import json

import numpy as np
import pytest

from src.errors import FormatError
from src.formats import (
    TrajectoryTable,
    load_candidates,
    load_point_cloud,
    load_report,
    load_support_sets,
    load_trajectory_table,
    save_candidates,
    save_point_cloud,
    save_report,
    save_support_sets,
    save_trajectory_table,
    state_columns,
)
from src.kinematics import Pose, load_robot_model
from src.perception import PointCloud
from src.proxy_collision import SupportSet
from src.visibility import CandidateCameraPose


def test_point_cloud_file(tmp_path, rng):
    path = tmp_path / "clouds" / "front.txt"
    cloud = PointCloud(rng.uniform(-1.0, 1.0, size=(25, 3)), source="front", timestamp=1.5)
    pose = Pose([0.1, 0.2, 0.3], [0.0, 1.0, 0.0, 0.0])
    save_point_cloud(path, cloud, pose)

    loaded, loaded_pose = load_point_cloud(path)
    assert np.allclose(loaded.points, cloud.points)
    assert loaded.source == "front"
    assert loaded.timestamp == 1.5
    assert np.allclose(loaded_pose.as_vector(), pose.as_vector())


def test_point_cloud_version_checked(tmp_path):
    path = tmp_path / "cloud.txt"
    path.write_text("# pointcloud format_version=2 source=x timestamp=0 pose=0,0,0,1,0,0,0\n0 0 0\n", encoding="utf-8")
    with pytest.raises(FormatError):
        load_point_cloud(path)
    path.write_text("# trajectory format_version=1\n", encoding="utf-8")
    with pytest.raises(FormatError):
        load_point_cloud(path)


def test_support_set_file(tmp_path, planar_model, rng):
    supports = {
        group: SupportSet.build(
            planar_model,
            group,
            rng.uniform(-2, 2, (5, 2)),
            rng.normal(size=(5, 1)),
            [0.25],
            np.ones((5, 1)),
            sv_budget=40,
            kernel_sigma=0.3,
        )
        for group in planar_model.groups
    }
    path = tmp_path / "detector_r1.json"
    save_support_sets(path, supports, planar_model.name)

    loaded = load_support_sets(path, planar_model)
    assert set(loaded) == set(supports)
    for group, support in supports.items():
        assert np.allclose(loaded[group].support, support.support)
        assert np.allclose(loaded[group].weights, support.weights)
        assert np.allclose(loaded[group].support_points, support.support_points)
        assert loaded[group].sv_budget == 40
        assert loaded[group].kernel_sigma == 0.3


def test_empty_support_set_file(tmp_path, planar_model):
    empty = SupportSet.build(planar_model, 0, np.zeros((0, 2)), np.zeros((0, 1)), [-1.0], np.zeros((0, 1)))
    path = tmp_path / "detector_r2.json"
    save_support_sets(path, {0: empty}, planar_model.name)
    loaded = load_support_sets(path, planar_model)[0]
    assert loaded.size == 0
    assert np.allclose(loaded.bias, [-1.0])


def test_support_sets_belong_to_their_model(tmp_path, planar_model):
    path = tmp_path / "detector_r1.json"
    save_support_sets(path, {}, planar_model.name)
    with pytest.raises(FormatError):
        load_support_sets(path, load_robot_model("fe_7dof.json"))


def test_candidates_file(tmp_path):
    candidates = [
        CandidateCameraPose(Pose([0.5, 0.0, 0.4]), np.array([0.1, -0.2]), True),
        CandidateCameraPose(Pose([2.5, 0.0, 0.0])),
    ]
    path = tmp_path / "candidates.json"
    save_candidates(path, candidates)
    loaded = load_candidates(path)
    assert [c.valid for c in loaded] == [True, False]
    assert np.allclose(loaded[0].ik_solution, [0.1, -0.2])
    assert loaded[1].ik_solution is None
    assert np.allclose(loaded[1].pose.position, [2.5, 0.0, 0.0])


def test_trajectory_table_layout():
    table = TrajectoryTable((2, 2), extra_columns=["visibility"])
    d = 2 + 2 + 7
    assert len(table.columns) == 4 + 3 * d + 1
    assert state_columns((2, 2))[:4] == ["q1_0", "q1_1", "q2_0", "q2_1"]
    with pytest.raises(FormatError):
        table.append(1, 0.0, 0.0, 0, np.zeros(d), np.zeros(d), np.zeros(d), [])
    with pytest.raises(FormatError):
        table.column("no_such_column")
    assert table.data.shape == (0, len(table.columns))


def test_trajectory_table_file(tmp_path, rng):
    d = 11
    table = TrajectoryTable((2, 2), extra_columns=["score_r1_g0", "visibility"])
    for k in range(3):
        table.append(k + 1, 0.1 * k, 0.05 * k, k % 2, rng.normal(size=d), rng.normal(size=d), rng.normal(size=d), [0.5, 0.9])
    path = tmp_path / "out" / "trajectory.csv"
    save_trajectory_table(path, table)

    loaded = load_trajectory_table(path)
    assert loaded.joint_counts == (2, 2)
    assert loaded.columns == table.columns
    assert np.allclose(loaded.data, table.data)
    assert np.allclose(loaded.column("mode"), [0, 1, 0])
    assert loaded.block("dd_").shape == (3, d)


def test_trajectory_table_rejects_bad_files(tmp_path):
    path = tmp_path / "trajectory.csv"
    path.write_text("# trajectory format_version=1 n1=2 n2=2\n", encoding="utf-8")
    with pytest.raises(FormatError):
        load_trajectory_table(path)
    with pytest.raises(FormatError):
        load_trajectory_table(tmp_path / "missing.csv")


def test_report_file(tmp_path):
    path = tmp_path / "report.json"
    save_report(path, {"verdict": "success", "records": []})
    assert load_report(path)["verdict"] == "success"
    assert json.loads(path.read_text(encoding="utf-8"))["format_version"] == 1

    path.write_text(json.dumps({"format_version": 7}), encoding="utf-8")
    with pytest.raises(FormatError):
        load_report(path)
