import numpy as np
import pytest

from src.vortex.geometry.theta import build_theta_section
from src.vortex.geometry.torus import TorusGrid, interpolate
from src.vortex.model.vortex import (
    MetricState,
    VortexParams,
    compute_rhs_t0,
    residual_s_path,
    residual_sys1,
    residual_sys2,
)
from src.vortex.solver.continuation import (
    branch_root,
    continue_path,
    pointwise_root_oracle,
    run_summary,
    solve_path,
    solve_t0,
)
from src.vortex.utils.config import RunConfig, SolverConfig
from src.vortex.utils.errors import (
    BranchLost,
    EllipticityLost,
    NoRealRoot,
    PathStuck,
    SolverError,
)


def test_branch_root_takes_larger_root():
    qa = np.array([1.0, 2.0])
    qb = np.array([3.0, 0.0])
    qc = np.array([-4.0, -8.0])
    np.testing.assert_allclose(branch_root(qa, qb, qc), [1.0, 2.0])


def test_branch_root_without_real_root():
    with pytest.raises(NoRealRoot) as exc:
        branch_root(np.ones((2, 2)), np.zeros((2, 2)), np.array([[-1.0, 1.0], [-1.0, -1.0]]))
    assert exc.value.details["node"] == [0, 1]


def test_unknown_system(theta16, solver_cfg):
    with pytest.raises(SolverError):
        solve_t0("sys3", VortexParams(), theta16, solver_cfg)


def test_first_system_t0_state(sys1_state0):
    params = VortexParams(r1=1, r2=1)
    assert residual_sys1(sys1_state0, params).sup() <= 1e-10
    assert sys1_state0.psi.max() <= 1.0 / 6.0
    assert sys1_state0.psi.min() >= -1.0 / 6.0
    np.testing.assert_allclose(sys1_state0.f.values, -0.5 * sys1_state0.psi.values)
    assert sys1_state0.phig2.max() < 1.0


def test_second_system_t0_state(sys2_state0, theta16):
    params = VortexParams(r1=1, r2=1, epsilon=2.0)
    residual = residual_s_path(sys2_state0.psi, theta16, params, s=1.0, system="sys2")
    assert residual.sup() <= 1e-10
    assert params.epsilon * sys2_state0.psi.max() <= 1.0 / 6.0


def test_t0_without_section_is_constant(zero16, solver_cfg):
    state = solve_t0("sys1", VortexParams(r1=1, r2=2), zero16, solver_cfg)
    np.testing.assert_allclose(state.psi.values, 1.0 / 15.0, atol=1e-10)

    state2 = solve_t0("sys2", VortexParams(r1=1, r2=2, epsilon=2.0), zero16, solver_cfg)
    # Delta psi + 1 - 3/5 - 6 eps psi = 0
    np.testing.assert_allclose(state2.psi.values, 0.4 / 12.0, atol=1e-10)


def test_epsilon_scaling_at_t0(theta16, solver_cfg, sys2_state0):
    doubled = solve_t0("sys2", VortexParams(r1=1, r2=1, epsilon=4.0), theta16, solver_cfg)
    eps_ratio = (4.0 * doubled.psi.sup()) / (2.0 * sys2_state0.psi.sup())
    assert 0.8 <= eps_ratio <= 1.25
    # Delta psi shrinks as epsilon grows, so only an upper bound is uniform
    assert doubled.lap_psi.sup() <= 1.25 * sys2_state0.lap_psi.sup()


def test_root_oracle_recovers_t0_laplacian(sys1_state0):
    params = VortexParams(r1=1, r2=1)
    rhs = compute_rhs_t0(sys1_state0, params)
    oracle = pointwise_root_oracle(sys1_state0.psi, sys1_state0.section, params, rhs, t=0.0)
    np.testing.assert_allclose(oracle.u.values, sys1_state0.lap_f.values, atol=1e-9)
    assert oracle.mean == pytest.approx(0.0, abs=1e-9)


def test_failing_start_is_rejected(zero16, solver_cfg):
    params = VortexParams(r1=1, r2=1)
    state = MetricState.constant(0.0, 0.5, zero16)
    with pytest.raises(BranchLost) as exc:
        continue_path("sys1", state, params, compute_rhs_t0(state, params), solver_cfg)
    assert "psi_upper" in exc.value.details["failed"]


def test_folded_symbol_stops_the_path(zero16, solver_cfg):
    params = VortexParams(r1=1, r2=1)
    x, _ = zero16.grid.nodes()
    state = MetricState.from_arrays(
        np.zeros(zero16.grid.shape), 2.0 * np.cos(2.0 * np.pi * x), zero16
    )
    rhs = compute_rhs_t0(MetricState.constant(0.0, 0.0, zero16), params)
    with pytest.raises(EllipticityLost) as exc:
        continue_path("sys1", state, params, rhs, solver_cfg)
    assert exc.value.details["t"] == 0.0
    assert exc.value.details["min_det"] == pytest.approx(128.0 - 64.0 * np.pi)


def test_constant_state_cannot_follow_a_shift(zero16):
    # Delta f has mean zero, so a constant change of the left side is unreachable
    params = VortexParams(r1=1, r2=2, alpha=1.0)
    state = MetricState.constant(0.0, 1.0 / 15.0, zero16)
    cfg = SolverConfig(dt0=0.02, dt_min=1e-3)
    with pytest.raises(PathStuck) as exc:
        continue_path("sys1", state, params, compute_rhs_t0(state, params), cfg)
    assert exc.value.details["last_t"] == 0.0
    assert exc.value.details["reason"] == "NoConvergence"


def test_constant_state_cannot_follow_a_shift_in_the_coupled_system(zero16):
    params = VortexParams(r1=1, r2=2, alpha=1.0, epsilon=2.0)
    # K eps = 360 balances the constant part 30 - 18 of the second equation
    state = MetricState.constant(0.0, 1.0 / 30.0, zero16)
    rhs = compute_rhs_t0(state, params)
    assert residual_sys2(state, params, rhs)[1].sup() <= 1e-12

    cfg = SolverConfig(dt0=0.02, dt_min=1e-3)
    with pytest.raises(PathStuck) as exc:
        continue_path("sys2", state, params, rhs, cfg)
    assert exc.value.details["last_t"] == 0.0
    assert exc.value.details["system"] == "sys2"
    assert exc.value.details["reason"] in {"NoConvergence", "SingularJacobian"}


def test_unshifted_path_is_stationary(zero16):
    params = VortexParams(r1=1, r2=2)
    state = MetricState.constant(0.1, 1.0 / 15.0, zero16)
    cfg = SolverConfig(predictor="secant", dt0=0.1)
    trace = continue_path(
        "sys1",
        state,
        params,
        compute_rhs_t0(state, params),
        cfg,
        snapshot_times=(0.0, 0.25, 1.0),
        sigma_states=3,
    )
    assert trace.final_t == 1.0
    assert trace.times == sorted(trace.times)
    assert set(trace.snapshots) == {0.0, 0.25, 1.0}
    assert trace.params.t == 1.0
    np.testing.assert_allclose(trace.state.f.values, 0.1)
    assert all(row.newton_iterations == 0 for row in trace.rows)
    assert len(trace.sigma_samples) == 3
    assert all(sigma > 1e-3 for _, sigma in trace.sigma_samples)
    assert trace.rows[0].wall_time is not None


@pytest.mark.slow
def test_first_system_full_path(tmp_path, theta16):
    config = RunConfig(
        system="sys1",
        n=16,
        output_dir=str(tmp_path),
        snapshot_times=(0.0, 0.5, 1.0),
        sigma_states=2,
    )
    result = solve_path("sys1", theta16, config)
    trace = result.trace
    assert result.params.alpha == 0.0
    assert result.restarts == 0
    assert trace.final_t == 1.0
    assert len(trace.rows) >= 51
    assert {0.0, 0.5, 1.0} <= set(trace.snapshots)
    np.testing.assert_allclose(trace.state.psi.values, result.state0.psi.values, atol=1e-12)
    assert trace.state.f.mean() == pytest.approx(result.state0.f.mean(), abs=1e-12)
    assert all(report.passed for report in trace.reports)

    summary = run_summary(result)
    assert summary["final_t"] == 1.0
    assert summary["t0"]["a0_min"] > 0
    assert summary["path_sup"]["sup_lap_psi"] == pytest.approx(result.state0.lap_psi.sup())
    assert len(summary["sigma_min"]) == 2


@pytest.mark.slow
def test_second_system_full_path(tmp_path, theta16):
    config = RunConfig(system="sys2", n=16, output_dir=str(tmp_path), sigma_states=1)
    result = solve_path("sys2", theta16, config)
    assert result.params.epsilon == pytest.approx(2.0)
    assert result.params.alpha == 0.0
    assert result.lap_psi_lower == pytest.approx(result.state0.lap_psi.min() - 0.5)
    assert result.trace.final_t == 1.0
    assert result.trace.reports[-1].checks["epsilon_condition"].passed


@pytest.fixture(scope="module")
def sys1_path64(tmp_path_factory):
    section = build_theta_section(TorusGrid(64))
    config = RunConfig(
        system="sys1", n=64, output_dir=str(tmp_path_factory.mktemp("path64")), sigma_states=2
    )
    return solve_path("sys1", section, config)


@pytest.mark.slow
def test_first_system_acceptance_at_n64(sys1_path64):
    result = sys1_path64
    trace = result.trace
    assert trace.final_t == 1.0
    assert all(report.passed for report in trace.reports)
    assert all(row.branch_margin > 0 for row in trace.rows)
    assert result.state0.psi.max() <= 1.0 / 6.0 + 1e-10
    assert result.state0.psi.min() >= -1.0 / 6.0 - 1e-10

    state = trace.state
    oracle = pointwise_root_oracle(state.psi, state.section, result.params.at(1.0), result.rhs)
    assert abs(oracle.mean) <= 1e-7
    assert np.max(np.abs(oracle.u.values - state.lap_f.values)) <= 1e-8


@pytest.mark.slow
def test_first_system_refinement_n64_to_n128(sys1_path64, tmp_path):
    section = build_theta_section(TorusGrid(128))
    config = RunConfig(system="sys1", n=128, output_dir=str(tmp_path), sigma_states=0)
    fine = solve_path("sys1", section, config).trace.state
    coarse = sys1_path64.trace.state
    assert np.max(np.abs(interpolate(coarse.f, 128).values - fine.f.values)) <= 1e-6
    assert np.max(np.abs(interpolate(coarse.psi, 128).values - fine.psi.values)) <= 1e-6
