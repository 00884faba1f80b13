import sys
from pathlib import Path

import hypothesis
import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

hypothesis.settings.register_profile("default", deadline=None, max_examples=60)
hypothesis.settings.register_profile("fast", deadline=None, max_examples=10)
hypothesis.settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def tube_mask(dims, axis_xy, radius, z_range=None):
    """Solid z-parallel cylinder: voxel centres within ``radius`` of the axis."""
    nx, ny, nz = dims
    x = np.arange(nx)[:, None]
    y = np.arange(ny)[None, :]
    disc = (x - axis_xy[0]) ** 2 + (y - axis_xy[1]) ** 2 <= radius ** 2
    mask = np.zeros(dims, dtype=np.uint8)
    z0, z1 = z_range if z_range else (0, nz)
    mask[:, :, z0:z1] = disc[:, :, None]
    return mask


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
