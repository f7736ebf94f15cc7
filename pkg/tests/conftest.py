import numpy as np
import pytest

from src.vortex.geometry.theta import build_theta_section, build_zero_section
from src.vortex.geometry.torus import TorusGrid, smooth_random_field
from src.vortex.model.vortex import MetricState, VortexParams
from src.vortex.solver.continuation import solve_t0
from src.vortex.utils.config import RunConfig, SolverConfig


@pytest.fixture(scope="session")
def grid16():
    return TorusGrid(16)


@pytest.fixture(scope="session")
def grid32():
    return TorusGrid(32)


@pytest.fixture(scope="session")
def theta16(grid16):
    return build_theta_section(grid16)


@pytest.fixture(scope="session")
def theta32(grid32):
    return build_theta_section(grid32)


@pytest.fixture(scope="session")
def zero16(grid16):
    return build_zero_section(grid16)


@pytest.fixture(scope="session")
def solver_cfg():
    return SolverConfig()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def generic_state(theta16):
    """Non-solution state with small smooth f and psi."""
    rng = np.random.default_rng(7)
    grid = theta16.grid
    f = smooth_random_field(grid, rng, mean_zero=True, amplitude=0.05)
    psi = smooth_random_field(grid, rng, amplitude=0.05)
    return MetricState.build(f, psi, theta16)


@pytest.fixture(scope="session")
def sys1_state0(theta16, solver_cfg):
    return solve_t0("sys1", VortexParams(r1=1, r2=1), theta16, solver_cfg)


@pytest.fixture(scope="session")
def sys2_state0(theta16, solver_cfg):
    return solve_t0("sys2", VortexParams(r1=1, r2=1, epsilon=2.0), theta16, solver_cfg)


@pytest.fixture
def small_config(tmp_path):
    return RunConfig(system="sys1", n=16, output_dir=str(tmp_path / "out"), sigma_states=2)
