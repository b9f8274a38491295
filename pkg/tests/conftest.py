import numpy as np
import pytest

from lidarfeat import simlidar


@pytest.fixture(scope="session")
def scene():
    return simlidar.demo_scene(seed=3)


@pytest.fixture(scope="session")
def small_spec():
    return simlidar.ScannerSpec.uniform(16, 256, 15.0, max_range=60.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pose_at(x, y, z=0.0, yaw_deg=0.0):
    return simlidar.waypoint(x, y, z, yaw_deg)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
