"""Shared fixtures: small meshes and calibrated material bundles."""

import numpy as np
import pytest

from pipeweld import materials as matmod
from pipeweld import mesh as meshmod
from pipeweld.fem import core


@pytest.fixture(scope="session")
def x80_base():
    return matmod.get_material("X80_base")


@pytest.fixture(scope="session")
def x52_base():
    return matmod.get_material("X52_base")


@pytest.fixture()
def unit_quad():
    """Single unit square element."""
    nodes = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]
    return meshmod.Mesh2D(nodes, [[0, 1, 2, 3]], [4], ["domain"])


@pytest.fixture()
def rect_mesh():
    """Coarse 5x3 structured rectangle, 10 x 4 mm."""
    return meshmod.generate_rectangle(np.linspace(0.0, 10.0, 6),
                                      np.linspace(0.0, 4.0, 4))


@pytest.fixture(scope="session")
def tiny_pipe():
    """Smallest sensible pipe section (fast, all region kinds present)."""
    spec = meshmod.PipeSectionSpec(n_r=4, n_groove=2, h_fine=2.0,
                                   h_coarse=6.0, window_arc=4.0)
    return meshmod.generate_pipe_section(spec)


@pytest.fixture()
def quad_blocks(unit_quad):
    return core.build_blocks(unit_quad)
