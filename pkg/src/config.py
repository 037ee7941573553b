"""Planner, perception and learning settings."""

import json
import logging
import threading
from pathlib import Path
from typing import Any, Optional

import numpy as np

from .errors import ConfigError
from .kinematics import quat_component_bound

logger = logging.getLogger(__name__)

CONFIG_FORMAT_VERSION = 1


def get_project_root() -> Path:
    return Path(__file__).parent.parent


class Config:
    """Settings stored in a versioned JSON file; missing keys fall back to defaults."""

    DEFAULT_SETTINGS = {
        # B-spline transcription
        "degree": 3,
        "control_points": 10,
        "collocation_points": 20,

        # Cost weights
        "w_acc": 1e-3,
        "w_dexterity": 1e-2,
        "w_duration": 0.1,
        "w_vis": 1.0,
        "w_slack": 100.0,

        # Terminal slack and duration bounds
        "eps_max_position": 0.05,  # m
        "eps_max_orientation": 0.1,  # rad
        "t_min": 0.5,  # s
        "t_max": 30.0,  # s
        "collision_margin": 0.01,

        # Augmented-Lagrangian solver
        "max_outer": 30,
        "max_inner": 200,
        "eq_tol": 1e-4,
        "ineq_tol": 1e-6,
        "penalty_init": 10.0,
        "penalty_growth": 10.0,
        "penalty_max": 1e8,

        # Collision proxy
        "kernel_order": 1,
        "kernel_sigma": 0.2,  # m
        "sv_budget_static": 200,
        "sv_budget_dynamic": 800,
        "gram_sigma": 2.0,  # m
        "threshold_free": 0.95,
        "threshold_collision": 0.99,
        "exploit_sigma": 0.1,
        "exploit_per_sv": 2,
        "explore_samples": 400,
        "trajectory_bias": 0.5,
        "initial_samples": 1500,

        # Perception
        "cluster_eps": 0.05,
        "cluster_min_pts": 8,
        "occlusion_extend": 1.0,  # m
        "sphere_inflation": 1.1,
        "reassociate_distance": 0.1,  # m

        # Visibility
        "vis_sigma": 0.2,
        "camera_positions": 5,  # jittered positions per sampling cell
        "vis_threshold": 0.5,
        "vis_refresh_distance": 0.05,  # m

        # MPC loop
        "step_dt": 0.1,  # s of simulated time per step
        "replan_trigger_distance": 0.4,  # m
        "d_safe": 0.15,  # m
        "replan_slack": 0.3,  # m, goal slack while evading
        "workers": 1,
    }

    def __init__(self, config_path: Optional[Path] = None, overrides: Optional[dict] = None):
        self._lock = threading.RLock()
        self.config_path = Path(config_path) if config_path else None
        self.settings = self.DEFAULT_SETTINGS.copy()
        self._load()
        if overrides:
            self.settings.update(self._validated(overrides, source="overrides"))

    def _validated(self, data: dict, source: str) -> dict:
        version = data.get("format_version", CONFIG_FORMAT_VERSION)
        if not isinstance(version, int) or version > CONFIG_FORMAT_VERSION:
            raise ConfigError(f"{source}: unsupported format_version {version}")
        unknown = set(data) - set(self.DEFAULT_SETTINGS) - {"format_version"}
        if unknown:
            logger.debug(f"{source}: ignoring unknown settings {sorted(unknown)}")
        return {k: v for k, v in data.items() if k in self.DEFAULT_SETTINGS}

    def _load(self) -> None:
        if not self.config_path or not self.config_path.exists():
            return
        try:
            with open(self.config_path, "r", encoding="utf-8") as f:
                data = json.load(f)
        except (json.JSONDecodeError, OSError) as e:
            logger.error(f"Failed to load {self.config_path}: {e} - using defaults")
            self.settings = self.DEFAULT_SETTINGS.copy()
            return
        self.settings = {**self.DEFAULT_SETTINGS, **self._validated(data, str(self.config_path))}

    def _save_settings(self) -> bool:
        if not self.config_path:
            return False
        try:
            self.config_path.parent.mkdir(parents=True, exist_ok=True)
            tmp_path = self.config_path.with_suffix(".json.tmp")
            with open(tmp_path, "w", encoding="utf-8") as f:
                json.dump({"format_version": CONFIG_FORMAT_VERSION, **self.settings}, f, indent=2)
            tmp_path.replace(self.config_path)
            return True
        except OSError as e:
            logger.error(f"Failed to save settings: {e}")
            return False

    def get(self, key: str, default: Any = None) -> Any:
        with self._lock:
            return self.settings.get(key, default)

    def set(self, key: str, value: Any) -> None:
        with self._lock:
            self.settings[key] = value
            self._save_settings()

    def update(self, values: dict) -> None:
        """Set several settings with a single save."""
        with self._lock:
            self.settings.update(values)
            self._save_settings()

    def snapshot(self) -> dict:
        with self._lock:
            return dict(self.settings)

    @property
    def step_dt(self) -> float:
        return float(self.get("step_dt", 0.1))

    @property
    def workers(self) -> int:
        return int(self.get("workers", 1))

    @property
    def eps_max(self) -> np.ndarray:
        """Terminal slack bound: 3 position entries (m), then 4 quaternion entries."""
        return np.concatenate(
            [
                np.full(3, self.get("eps_max_position")),
                np.full(4, quat_component_bound(self.get("eps_max_orientation"))),
            ]
        )

    def spline_settings(self) -> dict:
        return {k: self.get(k) for k in ("degree", "control_points", "collocation_points")}

    def weight_settings(self) -> dict:
        return {
            "acc": self.get("w_acc"),
            "dexterity": self.get("w_dexterity"),
            "duration": self.get("w_duration"),
            "vis": self.get("w_vis"),
            "slack": self.get("w_slack"),
        }

    def solver_settings(self) -> dict:
        keys = ("max_outer", "max_inner", "eq_tol", "ineq_tol", "penalty_init", "penalty_growth", "penalty_max")
        return {k: self.get(k) for k in keys}

    def gram_settings(self) -> dict:
        return {
            "threshold_free": self.get("threshold_free"),
            "threshold_collision": self.get("threshold_collision"),
            "gram_sigma": self.get("gram_sigma"),
        }
