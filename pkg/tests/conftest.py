import numpy as np
import pytest

from amfst.flow_backend import OracleBackend
from amfst.synth import Occluder, SceneConfig, generate_scene, scene_features

_acceptance: dict[str, str] = {}


def make_scene(**kw):
    """Scene from keyword overrides; returns (config, gt, scene)."""
    config = SceneConfig(**kw)
    gt, scene = generate_scene(config)
    return config, gt, scene


def oracle_features(scene, sigma=0.0, seed=0):
    backend = OracleBackend(scene, sigma=sigma, seed=seed)
    return backend, scene_features(backend, scene)


def grid_occlusion_scene(frame_count=40):
    """10x10 grid moving at (1, 0.5) px/frame; a co-moving bar hides 3 of 10 columns on frames 10-29."""
    xs, ys = np.meshgrid(np.arange(10) * 20.0 + 30.0, np.arange(10) * 20.0 + 30.0)
    points = np.column_stack([xs.ravel(), ys.ravel()])
    bar = Occluder(
        shape="rectangle",
        center=(30.0 + 20.0 * 8, 120.0),  # covers columns 7, 8, 9 (x = 170, 190, 210)
        half_size=(30.0, 110.0),
        velocity=(1.0, 0.5),
        start=10,
        end=29,
    )
    return make_scene(
        width=300, height=300, frame_count=frame_count, translation=(1.0, 0.5),
        occluders=[bar], points=points.tolist(),
    )


@pytest.fixture
def scene_factory():
    return make_scene


def pytest_runtest_logreport(report):
    if report.when != "call" or "test_acceptance.py" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    _acceptance[name] = "PASS" if report.passed else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_acceptance):
        terminalreporter.write_line(f"{_acceptance[name]:4}  {name}")
