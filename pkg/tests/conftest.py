import pathlib
import sys

import numpy as np
import pytest

from psdm_ct import build_geometry, make_phantom, PhantomSpec

sys.path.insert(0, str(pathlib.Path(__file__).parent))

DATA = pathlib.Path(__file__).parent / "data"


@pytest.fixture
def small_geom():
    """12 views over pi, 24 bins, FOV large enough for a 16x16 grid."""
    return build_geometry("parallel", 0.0, np.pi, 12, 24, 1.0, fov_radius=12.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def shepp64():
    return make_phantom(PhantomSpec("shepp-logan", 64))


@pytest.fixture(scope="session")
def rof_fixture():
    with np.load(DATA / "rof_reference.npz") as z:
        return {k: z[k] for k in z.files}


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(RESULTS, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)
