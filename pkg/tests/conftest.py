import numpy as np
import pytest

from symplane.estimator import PairStatistics
from symplane.geometry import SymmetryPlane, random_rotation, reflect_point


def random_plane(rng) -> SymmetryPlane:
    return SymmetryPlane(rng.normal(size=3), rng.uniform(-0.5, 0.5))


def mirrored_pairs(rng, n, plane=None, noise=0.0):
    """n pairs (x, R(x) + noise) under ``plane`` (random when omitted)."""
    plane = plane or random_plane(rng)
    x = rng.uniform(-0.5, 0.5, size=(n, 3))
    xp = reflect_point(x, plane) + rng.normal(scale=noise, size=(n, 3)) if noise else reflect_point(x, plane)
    return PairStatistics(x, xp), plane


def rotated_frame(rng):
    return random_rotation(rng), rng.uniform(-1, 1, size=3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import LINES

    if LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(LINES):
            terminalreporter.write_line(line)
