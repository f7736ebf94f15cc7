import numpy as np
import pytest

from src.vortex.geometry.torus import smooth_random_field
from src.vortex.model.vortex import MetricState, VortexParams
from src.vortex.solver.linearization import assemble_dense, linearize, residual_function
from src.vortex.solver.newton import newton, probe_jacobian
from src.vortex.utils.config import SolverConfig
from src.vortex.utils.errors import JacobianMismatch, NoConvergence


def square_minus_two(x):
    return x**2 - 2.0


def square_jacobian(x):
    return np.diag(2.0 * x)


def test_newton_converges_quadratically():
    result = newton(square_minus_two, square_jacobian, np.array([1.0, 3.0]), SolverConfig())
    np.testing.assert_allclose(result.x, np.sqrt(2.0))
    assert result.residual <= 1e-10
    assert result.iterations == len(result.residual_history) - 1
    assert all(b < a for a, b in zip(result.residual_history, result.residual_history[1:]))
    assert result.kappa is not None


def test_newton_returns_immediately_at_a_root():
    x0 = np.full(3, np.sqrt(2.0))
    result = newton(square_minus_two, square_jacobian, x0, SolverConfig())
    assert result.iterations == 0
    assert result.kappa is None


def test_wrong_jacobian_is_caught():
    def doubled(x):
        return np.diag(4.0 * x)

    assert probe_jacobian(square_minus_two, square_jacobian(np.ones(2) * 3), np.ones(2) * 3) < 1e-6
    with pytest.raises(JacobianMismatch) as exc:
        newton(square_minus_two, doubled, np.array([3.0, 2.0]), SolverConfig(), check_jacobian=True)
    assert exc.value.details["gap"] > 1e-4


def test_stops_at_max_newton():
    cfg = SolverConfig(max_newton=1)
    with pytest.raises(NoConvergence) as exc:
        newton(square_minus_two, square_jacobian, np.array([10.0]), cfg)
    assert exc.value.details["iterations"] == 1
    assert len(exc.value.details["history"]) == 2


def test_mean_zero_normalization_preserves_block_mean():
    # x[:2] enters only through its difference, so its mean is free
    def residual(x):
        return np.array([x[0] - x[1] - 1.0, x[2] - 3.0])

    class Jacobian:
        def __init__(self):
            self.matrix = np.array([[1.0, -1.0, 0.0], [0.0, 0.0, 1.0]])

        def apply(self, v):
            return self.matrix @ v

        def solve(self, rhs, rtol, maxiter):
            return np.linalg.lstsq(self.matrix, rhs, rcond=None)[0] + np.array([5.0, 5.0, 0.0])

    result = newton(
        residual,
        lambda x: Jacobian(),
        np.array([0.25, 0.25, 0.0]),
        SolverConfig(),
        normalization="mean_zero_f",
        f_size=2,
    )
    assert np.mean(result.x[:2]) == pytest.approx(0.25)
    np.testing.assert_allclose(result.x, [0.75, -0.25, 3.0])


def test_unknown_normalization():
    with pytest.raises(ValueError):
        newton(square_minus_two, square_jacobian, np.ones(1), SolverConfig(), normalization="bad")


def test_matrix_free_newton_matches_dense_oracle(theta16, sys1_state0):
    params = VortexParams(r1=1, r2=1)
    grid = theta16.grid
    nudge = smooth_random_field(grid, np.random.default_rng(11), amplitude=0.02)
    start = MetricState.build(sys1_state0.f, sys1_state0.psi + nudge, theta16)
    residual = residual_function(start, params, "sys1_psi")

    def operator_at(x):
        state = MetricState.from_arrays(start.f.values, x.reshape(grid.shape), theta16)
        return linearize(state, params, "sys1_psi")

    x0 = start.psi.values.ravel()
    cfg = SolverConfig()
    matrix_free = newton(residual, operator_at, x0, cfg)
    dense = newton(residual, lambda x: assemble_dense(operator_at(x)), x0, cfg)

    assert matrix_free.iterations > 0
    assert dense.residual <= cfg.newton_tol
    assert np.max(np.abs(matrix_free.x - dense.x)) <= 1e-9
    np.testing.assert_allclose(dense.x, sys1_state0.psi.values.ravel(), atol=1e-9)
