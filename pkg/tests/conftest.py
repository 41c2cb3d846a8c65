import numpy as np
import pytest

from flowlab.geometry import build_metric_state
from flowlab.grid_core import Grid, SymTensor2Field
from flowlab.scenario import DEFAULT_SETTINGS


@pytest.fixture
def grid2():
    return Grid.uniform(2, 16)


@pytest.fixture
def grid3():
    return Grid.uniform(3, 8)


@pytest.fixture
def flat2(grid2):
    return build_metric_state(SymTensor2Field.identity(grid2))


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def settings(tmp_path):
    return {**DEFAULT_SETTINGS, "output_dir": str(tmp_path / "outputs")}


def smooth(grid, rng, modes=2):
    """Random trigonometric polynomial with sup norm 1."""
    out = np.zeros(grid.points)
    for xa in grid.coordinates():
        for j in range(1, modes + 1):
            out += rng.standard_normal() * np.sin(j * xa + rng.uniform(0.0, 2.0 * np.pi)) / j
    return out / float(np.max(np.abs(out)))
