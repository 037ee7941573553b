"""Versioned text formats: point clouds, support sets, candidates, trajectory tables, reports."""

import io
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import FormatError
from .kinematics import Pose, RobotModel
from .perception import PointCloud
from .proxy_collision import SupportSet
from .visibility import CandidateCameraPose

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
FLOAT_FORMAT = "%.9e"


def _header_fields(line: str, kind: str, path: Path) -> dict:
    """Parse `# <kind> key=value ...` and check the version."""
    parts = line.lstrip("#").split()
    if not parts or parts[0] != kind:
        raise FormatError(f"{path}: expected a '{kind}' header, got {line.strip()!r}")
    fields = dict(p.split("=", 1) for p in parts[1:] if "=" in p)
    if fields.get("format_version") != str(FORMAT_VERSION):
        raise FormatError(f"{path}: unsupported format_version {fields.get('format_version')}")
    return fields


def _read_lines(path: Path) -> list[str]:
    try:
        return Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise FormatError(f"Cannot read {path}: {e}")


def _write_json(path: Path, data: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp_path = path.with_suffix(path.suffix + ".tmp")
    with open(tmp_path, "w", encoding="utf-8") as f:
        json.dump({"format_version": FORMAT_VERSION, **data}, f, indent=2)
    tmp_path.replace(path)


def _read_json(path: Path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise FormatError(f"Cannot read {path}: {e}")
    if data.get("format_version") != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format_version {data.get('format_version')}")
    return data


# --- point clouds ------------------------------------------------------------


def save_point_cloud(path: Path, cloud: PointCloud, camera_pose: Pose) -> None:
    """One header line with the camera pose, then `x y z` per point."""
    pose = " ".join(f"{v:.9g}" for v in camera_pose.as_vector())
    header = (
        f"pointcloud format_version={FORMAT_VERSION} source={cloud.source} "
        f"timestamp={cloud.timestamp:.9g} pose={pose.replace(' ', ',')}"
    )
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, cloud.points.reshape(-1, 3), fmt=FLOAT_FORMAT, header=header)


def load_point_cloud(path: Path) -> tuple[PointCloud, Pose]:
    lines = _read_lines(path)
    if not lines:
        raise FormatError(f"{path}: empty file")
    fields = _header_fields(lines[0], "pointcloud", path)
    try:
        pose = Pose.from_vector([float(v) for v in fields["pose"].split(",")])
        points = np.loadtxt(io.StringIO("\n".join(lines[1:])), ndmin=2).reshape(-1, 3)
        cloud = PointCloud(points, fields.get("source", ""), float(fields.get("timestamp", 0.0)))
    except (KeyError, ValueError) as e:
        raise FormatError(f"{path}: malformed point cloud: {e}")
    return cloud, pose


# --- support sets ------------------------------------------------------------


def support_set_to_dict(support: SupportSet) -> dict:
    return {
        "group": support.group,
        "kernel_order": support.kernel_order,
        "kernel_sigma": support.kernel_sigma,
        "sv_budget": support.sv_budget,
        "violations": support.violations,
        "support": support.support.tolist(),
        "weights": support.weights.tolist(),
        "bias": support.bias.tolist(),
        "labels": support.labels.tolist(),
    }


def support_set_from_dict(data: dict, model: RobotModel) -> SupportSet:
    try:
        return SupportSet.build(
            model,
            data["group"],
            np.array(data["support"], dtype=float),
            np.array(data["weights"], dtype=float),
            np.array(data["bias"], dtype=float),
            np.array(data["labels"], dtype=float),
            kernel_order=int(data["kernel_order"]),
            kernel_sigma=float(data["kernel_sigma"]),
            sv_budget=int(data["sv_budget"]),
            violations=int(data.get("violations", 0)),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError(f"Malformed support set: {e}")


def save_support_sets(path: Path, supports: dict, model_name: str) -> None:
    """Support sets of one robot keyed by group id."""
    _write_json(
        path,
        {
            "model": model_name,
            "groups": {str(g): support_set_to_dict(s) for g, s in sorted(supports.items(), key=lambda i: str(i[0]))},
        },
    )


def load_support_sets(path: Path, model: RobotModel) -> dict:
    data = _read_json(path)
    if data.get("model") != model.name:
        raise FormatError(f"{path}: support sets belong to {data.get('model')}, not {model.name}")
    return {
        (None if key == "None" else int(key)): support_set_from_dict(entry, model)
        for key, entry in data.get("groups", {}).items()
    }


# --- visibility candidates -----------------------------------------------------


def save_candidates(path: Path, candidates: Sequence[CandidateCameraPose]) -> None:
    _write_json(
        path,
        {
            "candidates": [
                {
                    "pose": c.pose.as_vector().tolist(),
                    "ik_solution": None if c.ik_solution is None else np.asarray(c.ik_solution).tolist(),
                    "valid": bool(c.valid),
                }
                for c in candidates
            ]
        },
    )


def load_candidates(path: Path) -> list[CandidateCameraPose]:
    data = _read_json(path)
    try:
        return [
            CandidateCameraPose(
                Pose.from_vector(c["pose"]),
                None if c["ik_solution"] is None else np.array(c["ik_solution"], dtype=float),
                bool(c["valid"]),
            )
            for c in data["candidates"]
        ]
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError(f"{path}: malformed candidate list: {e}")


# --- trajectory tables -------------------------------------------------------


def state_columns(joint_counts: tuple[int, int], prefix: str = "") -> list[str]:
    n1, n2 = joint_counts
    names = [f"q1_{i}" for i in range(n1)] + [f"q2_{i}" for i in range(n2)]
    names += ["obj_x", "obj_y", "obj_z", "obj_qw", "obj_qx", "obj_qy", "obj_qz"]
    return [prefix + n for n in names]


@dataclass
class TrajectoryTable:
    """Executed trajectory, one row per oversampled instant.

    Columns: step, time, phase, mode (0 task, 1 replanning), the full state,
    its time derivatives (`d_` prefix) and second derivatives (`dd_` prefix),
    then extra per-row columns such as the largest proxy score of every collision
    group (`score_r<robot>_g<group>`), the visibility score and obstacle distances.
    """

    joint_counts: tuple
    extra_columns: list = field(default_factory=list)
    rows: list = field(default_factory=list)

    @property
    def columns(self) -> list[str]:
        return (
            ["step", "time", "phase", "mode"]
            + state_columns(self.joint_counts)
            + state_columns(self.joint_counts, "d_")
            + state_columns(self.joint_counts, "dd_")
            + list(self.extra_columns)
        )

    def append(self, step: int, time: float, phase: float, mode: int, z, zd, zdd, extra: Sequence[float]) -> None:
        row = np.concatenate([[step, time, phase, mode], z, zd, zdd, extra]).astype(float)
        if row.size != len(self.columns):
            raise FormatError(f"Row has {row.size} values, table has {len(self.columns)} columns")
        self.rows.append(row)

    @property
    def data(self) -> np.ndarray:
        if not self.rows:
            return np.zeros((0, len(self.columns)))
        return np.vstack(self.rows)

    def column(self, name: str) -> np.ndarray:
        try:
            return self.data[:, self.columns.index(name)]
        except ValueError:
            raise FormatError(f"No column {name!r}")

    def block(self, prefix: str = "") -> np.ndarray:
        """(N, d) state block: '' for states, 'd_' for velocities, 'dd_' for accelerations."""
        indices = [self.columns.index(c) for c in state_columns(self.joint_counts, prefix)]
        return self.data[:, indices]


def save_trajectory_table(path: Path, table: TrajectoryTable) -> None:
    n1, n2 = table.joint_counts
    header = f"trajectory format_version={FORMAT_VERSION} n1={n1} n2={n2}\n" + ",".join(table.columns)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, table.data, fmt=FLOAT_FORMAT, delimiter=",", header=header)


def load_trajectory_table(path: Path) -> TrajectoryTable:
    lines = _read_lines(path)
    if len(lines) < 2:
        raise FormatError(f"{path}: missing header")
    fields = _header_fields(lines[0], "trajectory", path)
    try:
        joint_counts = (int(fields["n1"]), int(fields["n2"]))
        columns = lines[1].lstrip("# ").split(",")
        table = TrajectoryTable(joint_counts)
        fixed = len(table.columns)
        table.extra_columns = columns[fixed:]
        if columns[:fixed] != table.columns[:fixed]:
            raise FormatError(f"{path}: unexpected columns")
        body = "\n".join(lines[2:])
        data = np.loadtxt(io.StringIO(body), delimiter=",", ndmin=2) if body.strip() else np.zeros((0, len(columns)))
    except (KeyError, ValueError) as e:
        raise FormatError(f"{path}: malformed trajectory table: {e}")
    if data.shape[1] != len(columns):
        raise FormatError(f"{path}: rows have {data.shape[1]} values, header names {len(columns)}")
    table.rows = list(data)
    return table


# --- reports -----------------------------------------------------------------


def save_report(path: Path, report: dict) -> None:
    _write_json(path, report)


def load_report(path: Path) -> dict:
    return _read_json(path)

