import math
import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ifgf_rp.geometry import build_sphere

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def sphere6():
    """Six-patch unit sphere with 6x6 nodes per patch (216 nodes)."""
    return build_sphere(1.0, 0, (6, 6))


@pytest.fixture(scope="session")
def sphere2lam():
    """24-patch unit sphere at 6x6 nodes, with k making it two wavelengths across."""
    return build_sphere(1.0, 1, (6, 6)), 2 * math.pi


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "REPORT", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
