import json
import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def write_json(path, data):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh)
    return str(path)


@pytest.fixture
def scene_files(tmp_path):
    """A rubber block resting on a wooden slab, with a small config (3 short frames)."""
    from splatsim.scene_io import save_splat_ply
    from splatsim.synthetic import block_scene, concat

    scene = concat(
        [
            block_scene((0, 0, 0.1), (0.16, 0.16, 0.2), (8, 8, 10), object_id=0),
            block_scene((0, 0, -0.02), (0.4, 0.4, 0.04), (10, 10, 2), color=(0.5, 0.5, 0.5), object_id=1),
        ]
    )
    save_splat_ply(scene, tmp_path / "scene.ply")
    manifest = {
        "objects": [
            {
                "object_id": 0,
                "tag": "rubber",
                "force_specs": [
                    {"kind": "impulse", "application_point": [0, 0, 0.2], "direction": [1, 0, 0], "magnitude": 0.01}
                ],
            },
            {"object_id": 1, "tag": "wooden table"},
        ]
    }
    config = {"substeps_per_frame": 24, "frames": 3, "grid_resolution": 32, "width": 64, "height": 48}
    return {
        "dir": tmp_path,
        "scene": str(tmp_path / "scene.ply"),
        "manifest": write_json(tmp_path / "manifest.json", manifest),
        "config": write_json(tmp_path / "config.json", config),
    }


# ---------------------------------------------------------------- acceptance log

ACCEPTANCE = {}


def record_criterion(number, title, passed, detail):
    line = f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {title}"
    if detail:
        line += "  [" + ", ".join(f"{k}={v}" for k, v in detail.items()) + "]"
    ACCEPTANCE[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[number])
