import numpy as np
import pytest

from src.vortex.geometry.torus import smooth_random_field
from src.vortex.model.vortex import MetricState, VortexParams
from src.vortex.solver.linearization import (
    assemble_dense,
    ellipticity_check,
    fd_check,
    linearize,
    restricted_sigma_min,
)
from src.vortex.utils.errors import SizeError, SolverError

PARAMS = VortexParams(r1=1, r2=2, alpha=0.5, epsilon=2.0, t=0.3)


@pytest.mark.parametrize(
    "tag, tol", [("sys1_psi", 1e-7), ("sys1_f", 1e-7), ("sys2_coupled", 1e-6)]
)
def test_linearization_matches_finite_differences(generic_state, tag, tol):
    assert fd_check(generic_state, PARAMS, tag, n_probes=20) <= tol


@pytest.mark.parametrize("system, s", [("sys1", 0.5), ("sys2", 1.0)])
def test_s_path_linearization_matches_finite_differences(generic_state, system, s):
    assert fd_check(generic_state, PARAMS, "s_path", n_probes=5, s=s, system=system) < 1e-6


def test_unknown_tag(generic_state):
    with pytest.raises(SolverError):
        linearize(generic_state, PARAMS, "sys3")


def test_dense_assembly_agrees_with_apply(generic_state, rng):
    op = linearize(generic_state, PARAMS, "sys1_psi")
    matrix = assemble_dense(op)
    v = rng.standard_normal(op.size)
    np.testing.assert_allclose(matrix @ v, op.apply(v), atol=1e-10)


def test_psi_jacobian_is_symmetric(generic_state):
    matrix = assemble_dense(linearize(generic_state, PARAMS, "sys1_psi"))
    np.testing.assert_allclose(matrix, matrix.T, atol=1e-10)


def test_psi_jacobian_spectrum_without_section(zero16):
    params = VortexParams(r1=1, r2=2)
    state = MetricState.constant(0.0, 1.0 / 15.0, zero16)
    matrix = assemble_dense(linearize(state, params, "sys1_psi"))
    np.testing.assert_allclose(matrix, matrix.T, atol=1e-10)

    eigenvalues = np.linalg.eigvalsh(matrix)
    assert eigenvalues.max() <= -30.0 + 1e-9
    # 5 Delta - 30 over the full set of Fourier modes
    n = zero16.grid.n
    k = np.fft.fftfreq(n, d=1.0 / n)
    expected = 5.0 * (-np.pi * (k[:, None] ** 2 + k[None, :] ** 2)) - 30.0
    np.testing.assert_allclose(np.sort(eigenvalues), np.sort(expected.ravel()), atol=1e-8)


def test_dense_assembly_refuses_large_grids(theta32):
    grid = theta32.grid
    state = MetricState.build(
        smooth_random_field(grid, np.random.default_rng(0), amplitude=0.01),
        smooth_random_field(grid, np.random.default_rng(1), amplitude=0.01),
        theta32,
    )
    with pytest.raises(SizeError):
        assemble_dense(linearize(state, PARAMS, "sys1_psi"))


def test_restriction_removes_constant_f_kernel(generic_state):
    op = linearize(generic_state, PARAMS, "sys1_f")
    full = np.linalg.svd(assemble_dense(op), compute_uv=False)
    assert full.min() < 1e-8
    assert restricted_sigma_min(op) > 1e-3


def test_psi_solve_uses_preconditioned_gmres(generic_state, rng):
    op = linearize(generic_state, PARAMS, "sys1_psi")
    rhs = rng.standard_normal(op.size)
    x = op.solve(rhs, rtol=1e-12)
    assert np.linalg.norm(op.apply(x) - rhs) < 1e-8 * np.linalg.norm(rhs)


def test_f_solve_is_direct_and_mean_zero(generic_state):
    op = linearize(generic_state, PARAMS, "sys1_f")
    assert op.direct_solve is not None
    x_true = generic_state.f.values.ravel()
    x = op.solve(op.apply(x_true))
    np.testing.assert_allclose(x, x_true - x_true.mean(), atol=1e-10)


def test_coupled_solve_recovers_mean_zero_f(generic_state):
    op = linearize(generic_state, PARAMS, "sys2_coupled")
    m = op.f_size
    assert m == generic_state.grid.n**2
    x_true = generic_state.flat()
    x_true[:m] -= x_true[:m].mean()
    rhs = op.apply(x_true)
    x = op.solve(rhs, rtol=1e-12, maxiter=400)
    assert np.linalg.norm(op.apply(x) - rhs) < 1e-6 * np.linalg.norm(rhs)


def test_principal_symbol_at_s_zero(generic_state):
    det = ellipticity_check(generic_state, VortexParams(r1=1, r2=1), s=0.0)
    np.testing.assert_allclose(det.values, 144.0)
