import numpy as np
import pytest

from perfhom.acceptance import AcceptanceRun
from perfhom.cell import build_model
from perfhom.geometry import CellGeometry, build_cell_mesh
from perfhom.materials import preset_coefficients, preset_density


@pytest.fixture(scope="session")
def cell8():
    return build_cell_mesh(CellGeometry(m=8))


@pytest.fixture(scope="session")
def cell16():
    return build_cell_mesh(CellGeometry(m=16))


@pytest.fixture(scope="session")
def plain8():
    return build_cell_mesh(CellGeometry("square", None, 8))


@pytest.fixture(scope="session")
def models(cell8):
    a = preset_coefficients("identity", cell8)
    return {case: build_model(cell8, a, preset_density(case, cell8))
            for case in ("positive_avg", "zero_avg", "negative_avg")}


@pytest.fixture(scope="session")
def acceptance_run():
    """Shared sweeps (n = 2, 4, 8; s = m = 8) so every module reuses one computation."""
    return AcceptanceRun()


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def acceptance_log(request):
    return request.config.stash.setdefault(_ACCEPTANCE, [])


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
