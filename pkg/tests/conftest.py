import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from chks_control.core import GammaSource, Grid2D, ModelParams
from chks_control.state import InitialData, Model

settings.register_profile("chks", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow,
                                                 HealthCheck.function_scoped_fixture])
settings.load_profile("chks")


def bump_data(grid: Grid2D) -> InitialData:
    X, Y = grid.mesh
    return InitialData(0.5 * np.cos(np.pi * X) * np.cos(np.pi * Y),
                       0.5 + 0.25 * np.cos(np.pi * X))


@pytest.fixture
def grid16():
    return Grid2D(16, 16)


@pytest.fixture
def small_model(grid16):
    """16x16, nt=20, T=0.2 with tight solver tolerances."""
    params = ModelParams(T=0.2, nt=20, newton_tol=1e-12, cg_tol=1e-14, krylov_tol=1e-14)
    return Model(grid16, params, GammaSource(amplitude=0.5))


@pytest.fixture
def small_init(grid16):
    return bump_data(grid16)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
