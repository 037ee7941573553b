"""Tests for SVG plot output."""

import numpy as np

from src.formats import TrajectoryTable
from src.plots import emit_plots


def make_table(rows=12):
    d = 11
    table = TrajectoryTable((2, 2), extra_columns=["visibility", "eps_bound", "min_distance", "intruder_distance"])
    for k in range(rows):
        z = np.zeros(d)
        z[4:7] = [0.8 + 0.01 * k, 0.866 - 0.005 * k, 0.0]
        z[7] = 1.0
        mode = 1 if 4 <= k < 8 else 0
        extra = [k / rows, 0.05, 0.3 - 0.01 * k, np.inf if k < 3 else 0.5]
        table.append(k // 2 + 1, 0.05 * k, k / rows, mode, z, np.zeros(d), np.zeros(d), extra)
    return table


def test_emit_plots_writes_svgs(tmp_path):
    paths = emit_plots(make_table(), tmp_path / "plots", threshold=0.5, d_safe=0.15)
    assert sorted(p.name for p in paths) == ["distance.svg", "paths.svg", "visibility.svg"]
    for path in paths:
        text = path.read_text(encoding="utf-8")
        assert text.lstrip().startswith("<?xml")
        assert "<svg" in text


def test_emit_plots_empty_table(tmp_path):
    paths = emit_plots(make_table(rows=0), tmp_path, threshold=0.5, d_safe=0.15)
    assert all(p.exists() for p in paths)
