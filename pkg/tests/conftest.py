from __future__ import annotations

import numpy as np
import pytest

from ucplab.geometry import HalfBall
from ucplab.mesh import build_mesh


@pytest.fixture(scope="session")
def half_mesh_coarse():
    return build_mesh(HalfBall(1.0), 0.1)


@pytest.fixture(scope="session")
def half_mesh_fine():
    return build_mesh(HalfBall(1.0), 0.05)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
