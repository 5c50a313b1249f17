import numpy as np
import pytest

from saddlemg.hierarchy import build_hierarchy
from saddlemg.mesh import build_square_mesh
from saddlemg.saddle_mg import build_multilevel


def cos_source(x, y):
    return 2.0 * np.pi**2 * np.cos(np.pi * x) * np.cos(np.pi * y)


@pytest.fixture(scope="session")
def source():
    return cos_source


@pytest.fixture(scope="session")
def ml_small():
    """Identity coefficient, n=4 coarse grid, two levels (h = 1/8)."""
    return build_multilevel(build_hierarchy(build_square_mesh(4), 2))


@pytest.fixture(scope="session")
def ml_three():
    return build_multilevel(build_hierarchy(build_square_mesh(4), 3))
