import logging
import time
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..geometry.theta import SectionData, build_section
from ..geometry.torus import ScalarField, TorusGrid, interpolate
from ..model.vortex import (
    MetricState,
    RhsData,
    VortexParams,
    calibrate_alpha,
    calibrate_epsilon,
    compute_rhs_t0,
    determinant_lhs,
    grad_term,
    lhs_factors,
    residual_sys1,
    residual_sys2,
    s_path_start,
)
from ..utils.config import RunConfig, SolverConfig
from ..utils.errors import (
    BranchLost,
    EpsilonTooSmall,
    NoConvergence,
    NoRealRoot,
    PathStuck,
    SingularJacobian,
    SolverError,
)
from .linearization import (
    DENSE_MAX_N,
    linearize,
    residual_function,
    restricted_sigma_min,
    unknowns,
)
from .monitor import (
    BoundsReport,
    SupTracker,
    check_bounds,
    require_elliptic,
    tracked_quantities,
)
from .newton import NewtonResult, newton

logger = logging.getLogger(__name__)

SIGMA_GRID_N = 16
SYSTEMS = ("sys1", "sys2")


@dataclass
class TraceRow:
    """One accepted step of a continuity path."""

    t: float
    dt: float
    newton_iterations: int
    residual_f: float
    residual_psi: float
    kappa: Optional[float]
    psi_min: float
    psi_max: float
    lap_psi_min: float
    lap_psi_max: float
    lap_f_min: float
    lap_f_max: float
    phig2_max: float
    branch_margin: float
    det_min: float
    a0_residual_min: float
    margins: Dict[str, float] = field(default_factory=dict)
    wall_time: Optional[float] = None


@dataclass
class PathTrace:
    system: str
    params: VortexParams
    rows: List[TraceRow] = field(default_factory=list)
    state: Optional[MetricState] = None
    snapshots: Dict[float, MetricState] = field(default_factory=dict)
    sigma_samples: List[Tuple[float, float]] = field(default_factory=list)
    tracker: SupTracker = field(default_factory=SupTracker)
    reports: List[BoundsReport] = field(default_factory=list)

    @property
    def final_t(self) -> float:
        return self.rows[-1].t if self.rows else 0.0

    @property
    def times(self) -> List[float]:
        return [row.t for row in self.rows]


@dataclass
class PathResult:
    """Everything a full run produces: calibrated constants, t = 0 data and the trace."""

    system: str
    params: VortexParams
    state0: MetricState
    rhs: RhsData
    trace: PathTrace
    lap_psi_lower: Optional[float] = None
    restarts: int = 0


@dataclass
class RootOracleResult:
    u: ScalarField
    mean: float


def _residuals(
    state: MetricState, params: VortexParams, rhs: RhsData, system: str
) -> Tuple[ScalarField, ScalarField]:
    if system == "sys1":
        return (
            residual_sys1(state, params, rhs, which="f_eq"),
            residual_sys1(state, params, which="psi_eq"),
        )
    return residual_sys2(state, params, rhs)


def _solve_s_step(
    psi: np.ndarray,
    section: SectionData,
    params: VortexParams,
    s: float,
    system: str,
    cfg: SolverConfig,
    check: bool,
    tol: Optional[float] = None,
) -> NewtonResult:
    grid = section.grid
    zero_f = np.zeros(grid.shape)

    def state_of(x: np.ndarray) -> MetricState:
        return MetricState.from_arrays(zero_f, x.reshape(grid.shape), section)

    residual = residual_function(state_of(psi.ravel()), params, "s_path", s=s, system=system)
    return newton(
        residual,
        lambda x: linearize(state_of(x), params, "s_path", s=s, system=system),
        psi.ravel(),
        cfg,
        check_jacobian=check,
        tol=tol,
    )


def solve_t0(
    system: str, params: VortexParams, section: SectionData, cfg: SolverConfig
) -> MetricState:
    """t = 0 state: continue L_s = 0 in s from the constant start, then polish."""
    if system not in SYSTEMS:
        raise SolverError(f"unknown system {system}", {"system": system})
    grid = section.grid
    params = params.at(0.0)
    psi = np.full(grid.shape, s_path_start(params, system))
    logger.info(
        f"Solving t=0 for {system}: start psi={psi[0, 0]:.6g}, eps={params.epsilon:g}"
    )

    s = 0.0
    ds = cfg.ds0
    check = cfg.check_jacobian
    while s < 1.0:
        s_try = min(1.0, s + ds)
        try:
            result = _solve_s_step(psi, section, params, s_try, system, cfg, check)
        except (NoConvergence, SingularJacobian) as e:
            ds *= 0.5
            logger.warning(f"s-step to {s_try:.4f} failed ({e.message}); ds -> {ds:.2e}")
            if ds < cfg.dt_min:
                raise PathStuck(
                    f"s-continuation stuck at s = {s:.6f}",
                    {"last_s": s, "ds": ds, "system": system},
                )
            continue
        check = False
        psi = result.x.reshape(grid.shape)
        s = s_try
        logger.debug(f"s = {s:.4f} reached in {result.iterations} iterations")

    if system == "sys1":
        zero_f = np.zeros(grid.shape)

        def state_of(x: np.ndarray) -> MetricState:
            return MetricState.from_arrays(zero_f, x.reshape(grid.shape), section)

        polished = newton(
            residual_function(state_of(psi.ravel()), params, "sys1_psi"),
            lambda x: linearize(state_of(x), params, "sys1_psi"),
            psi.ravel(),
            cfg,
        )
    else:
        scale = (1 + 2 * params.alpha) * (4 * params.r2 + 2)
        polished = _solve_s_step(
            psi, section, params, 1.0, system, cfg, False, tol=cfg.newton_tol / scale
        )
    psi = polished.x.reshape(grid.shape)

    state0 = MetricState.from_arrays(-0.5 * psi, psi, section)
    max_p = state0.phig2.max()
    if max_p >= 1.0:
        logger.error(f"|phi|^2_g0 reaches {max_p:.6f} at t=0")
        raise SolverError(
            "t = 0 state violates |phi|^2_g < 1", {"max_phig2": max_p}
        )
    logger.info(
        f"t=0 solved: psi in [{state0.psi.min():.6g}, {state0.psi.max():.6g}], "
        f"max |phi|^2_g = {max_p:.6g}"
    )
    return state0


def branch_root(qa: np.ndarray, qb: np.ndarray, qc: np.ndarray) -> np.ndarray:
    """Larger root of qa u^2 + qb u + qc = 0 (qa > 0), computed without cancellation."""
    disc = qb * qb - 4.0 * qa * qc
    if np.any(disc < 0):
        node = np.unravel_index(np.argmin(disc), np.shape(disc))
        raise NoRealRoot(
            f"negative discriminant {float(np.min(disc)):.3e}",
            {"node": [int(i) for i in node], "discriminant": float(np.min(disc))},
        )
    root = np.sqrt(disc)
    q = -0.5 * (qb + np.where(qb >= 0, root, -root))
    safe_q = np.where(q == 0.0, 1.0, q)
    first = q / qa
    second = np.where(q == 0.0, first, qc / safe_q)
    return np.maximum(first, second)


def pointwise_root_oracle(
    psi: ScalarField,
    section: SectionData,
    params: VortexParams,
    rhs: RhsData,
    t: Optional[float] = None,
) -> RootOracleResult:
    """Solve the determinant equation for u = Delta f node by node at fixed psi."""
    if t is not None:
        params = params.at(t)
    sigma = params.sigma
    r1 = params.r1
    probe = MetricState.build(ScalarField.zeros(psi.grid), psi, section)
    _, c1, _, c2 = lhs_factors(probe, params)
    g = probe.grad.values
    a_shift = probe.lap_psi.values + r1 + 1 + sigma * (2 * r1 + 1)
    b_shift = r1 + sigma * (2 * r1 + 1)
    qa = c1 * c2
    qb = c1 * (c2 * (a_shift + b_shift) + g)
    qc = c1 * (c2 * a_shift * b_shift + g * b_shift) - rhs.a0.values
    u = psi.with_values(branch_root(qa, qb, qc))
    return RootOracleResult(u, u.mean())


def _trace_row(
    t: float,
    dt: float,
    state: MetricState,
    params: VortexParams,
    rhs: RhsData,
    system: str,
    report: BoundsReport,
    result: Optional[NewtonResult],
    wall_time: Optional[float],
) -> TraceRow:
    first, second = _residuals(state, params, rhs, system)
    checks = report.checks
    a0_gap = determinant_lhs(state, params) - rhs.a0.values
    return TraceRow(
        t=t,
        dt=dt,
        newton_iterations=result.iterations if result else 0,
        residual_f=first.sup(),
        residual_psi=second.sup(),
        kappa=result.kappa if result else None,
        psi_min=state.psi.min(),
        psi_max=state.psi.max(),
        lap_psi_min=state.lap_psi.min(),
        lap_psi_max=state.lap_psi.max(),
        lap_f_min=state.lap_f.min(),
        lap_f_max=state.lap_f.max(),
        phig2_max=state.phig2.max(),
        branch_margin=checks["branch"].margin,
        det_min=checks["ellipticity"].measured,
        a0_residual_min=float(np.min(a0_gap)),
        margins=report.margins(),
        wall_time=wall_time,
    )


def _correct(
    system: str,
    guess: MetricState,
    params: VortexParams,
    rhs: RhsData,
    cfg: SolverConfig,
    check: bool,
) -> Tuple[MetricState, NewtonResult]:
    grid = guess.grid
    section = guess.section
    m = grid.n**2
    if system == "sys1":
        psi = guess.psi.values

        def state_of(x: np.ndarray) -> MetricState:
            return MetricState.from_arrays(x.reshape(grid.shape), psi, section)

        tag = "sys1_f"
    else:

        def state_of(x: np.ndarray) -> MetricState:
            return MetricState.from_arrays(
                x[:m].reshape(grid.shape), x[m:].reshape(grid.shape), section
            )

        tag = "sys2_coupled"

    result = newton(
        residual_function(guess, params, tag, rhs),
        lambda x: linearize(state_of(x), params, tag),
        unknowns(guess, tag),
        cfg,
        normalization="mean_zero_f",
        f_size=m,
        check_jacobian=check,
    )
    return state_of(result.x), result


def _predict(
    current: MetricState,
    previous: Optional[Tuple[float, MetricState]],
    t: float,
    t_next: float,
    predictor: str,
) -> MetricState:
    if predictor != "secant" or previous is None:
        return current
    t_prev, state_prev = previous
    ratio = (t_next - t) / (t - t_prev)
    f = current.f.values + ratio * (current.f.values - state_prev.f.values)
    psi = current.psi.values + ratio * (current.psi.values - state_prev.psi.values)
    return MetricState.from_arrays(f, psi, current.section)


def _next_time(t: float, dt: float, stops: Sequence[float]) -> float:
    t_next = min(1.0, t + dt)
    for stop in stops:
        if t < stop < t_next:
            return stop
    return t_next


def _coarse_state(state: MetricState, n: int = SIGMA_GRID_N) -> Optional[MetricState]:
    """Interpolate a state onto an n grid with a section rebuilt there."""
    if state.grid.n <= n:
        return state
    if state.section.kind not in ("theta", "zero"):
        return None
    coarse = build_section(state.section.kind, TorusGrid(n, state.grid.deg_l))
    return MetricState.build(interpolate(state.f, n), interpolate(state.psi, n), coarse)


def sample_sigma_min(
    system: str,
    states: Sequence[Tuple[float, MetricState, VortexParams]],
    count: int,
    cfg: SolverConfig,
) -> List[Tuple[float, float]]:
    """Restricted smallest singular values at evenly spaced accepted states."""
    if count <= 0 or not states:
        return []
    picks = np.unique(np.linspace(0, len(states) - 1, count).round().astype(int))
    dense_n = min(cfg.dense_max_n, DENSE_MAX_N)
    samples = []
    for index in picks:
        t, state, params = states[index]
        coarse = _coarse_state(state, SIGMA_GRID_N if state.grid.n > dense_n else state.grid.n)
        if coarse is None:
            logger.warning("Skipping singular-value sample for a synthetic section")
            continue
        tags = ("sys1_psi", "sys1_f") if system == "sys1" else ("sys2_coupled",)
        sigma = min(
            restricted_sigma_min(linearize(coarse, params, tag), max_n=dense_n)
            for tag in tags
        )
        samples.append((t, sigma))
        logger.debug(f"sigma_min at t={t:.4f}: {sigma:.3e}")
        if sigma < cfg.sigma_min_tol:
            logger.error(f"Smallest singular value {sigma:.3e} at t={t:.4f}")
            raise SingularJacobian(
                f"restricted Jacobian nearly singular at t = {t:.4f}",
                {"t": t, "sigma_min": sigma, "tol": cfg.sigma_min_tol},
            )
    return samples


def continue_path(
    system: str,
    state0: MetricState,
    params: VortexParams,
    rhs: RhsData,
    cfg: SolverConfig,
    snapshot_times: Sequence[float] = (0.0, 1.0),
    sigma_states: int = 0,
    lap_psi_lower: Optional[float] = None,
    record_timings: bool = True,
) -> PathTrace:
    """Follow the solution branch from t = 0 to t = 1 with monitored, adaptive steps."""
    if system not in SYSTEMS:
        raise SolverError(f"unknown system {system}", {"system": system})
    params = params.at(0.0)
    trace = PathTrace(system, params)
    stops = sorted(set(float(t) for t in snapshot_times) | {1.0})

    def monitor(state: MetricState, step_params: VortexParams) -> BoundsReport:
        grad_term(state, cfg.grad_tol)
        return check_bounds(
            state,
            step_params,
            rhs,
            system,
            report_tol=cfg.report_tol,
            newton_tol=cfg.newton_tol,
            grad_tol=cfg.grad_tol,
            tracker=trace.tracker,
        )

    def accept(
        t: float,
        dt: float,
        state: MetricState,
        step_params: VortexParams,
        report: BoundsReport,
        result: Optional[NewtonResult],
        started: float,
    ):
        wall = time.perf_counter() - started if record_timings else None
        trace.rows.append(
            _trace_row(t, dt, state, step_params, rhs, system, report, result, wall)
        )
        trace.reports.append(report)
        for name, value in tracked_quantities(state, step_params, system).items():
            trace.tracker.record(name, value)
        if any(abs(t - stop) < 1e-12 for stop in stops) or t == 0.0:
            trace.snapshots[round(t, 12)] = state

    started = time.perf_counter()
    report0 = monitor(state0, params)
    require_elliptic(report0, 0.0)
    if not report0.passed:
        logger.error(f"t=0 state fails bounds: {report0.failures()}")
        raise BranchLost(
            "t = 0 state fails the monitored bounds",
            {"t": 0.0, "failed": report0.failures()},
        )
    accept(0.0, 0.0, state0, params, report0, None, started)

    sampled: List[Tuple[float, MetricState, VortexParams]] = [(0.0, state0, params)]
    t = 0.0
    dt = cfg.dt0
    current = state0
    previous: Optional[Tuple[float, MetricState]] = None
    check = cfg.check_jacobian

    while t < 1.0:
        t_next = _next_time(t, dt, stops)
        step_params = params.at(t_next)
        started = time.perf_counter()
        guess = _predict(current, previous, t, t_next, cfg.predictor)
        try:
            trial, result = _correct(system, guess, step_params, rhs, cfg, check)
            check = False
            branch = np.min(trial.lap_f.values + params.r1 + step_params.sigma * (2 * params.r1 + 1))
            if branch <= 0:
                raise BranchLost(
                    f"branch margin {branch:.3e} at t = {t_next:.6f}",
                    {"t": t_next, "margin": float(branch)},
                )
            if system == "sys2" and lap_psi_lower is not None:
                low = trial.lap_psi.min()
                if low < lap_psi_lower:
                    logger.warning(
                        f"min Delta psi {low:.4g} below assumed {lap_psi_lower:.4g} at t={t_next:.4f}"
                    )
                    raise EpsilonTooSmall(
                        "Delta psi fell below the bound epsilon was calibrated for",
                        {"t": t_next, "lap_psi_min": low, "lap_psi_lower": lap_psi_lower},
                    )
            report = monitor(trial, step_params)
            require_elliptic(report, t_next)
            if system == "sys2" and report.checks["epsilon_condition"].margin <= 0:
                raise EpsilonTooSmall(
                    "epsilon condition lost along the path",
                    {"t": t_next, "lap_psi_min": trial.lap_psi.min()},
                )
            if not report.passed:
                raise BranchLost(
                    f"monitored bounds failed at t = {t_next:.6f}",
                    {"t": t_next, "failed": report.failures()},
                )
        except (NoConvergence, SingularJacobian, BranchLost) as e:
            dt *= 0.5
            logger.warning(
                f"Step to t={t_next:.6f} rejected ({type(e).__name__}: {e.message}); dt -> {dt:.2e}"
            )
            if dt < cfg.dt_min:
                logger.error(f"Path stuck at t={t:.6f}")
                raise PathStuck(
                    f"step size fell below dt_min at t = {t:.6f}",
                    {
                        "last_t": t,
                        "dt": dt,
                        "system": system,
                        "reason": type(e).__name__,
                        "cause": e.details,
                    },
                )
            continue

        accept(t_next, t_next - t, trial, step_params, report, result, started)
        sampled.append((t_next, trial, step_params))
        previous = (t, current)
        current = trial
        t = t_next
        dt = min(cfg.dt0, 2.0 * dt)
        logger.debug(f"Accepted t={t:.6f} after {result.iterations} Newton iterations")

    trace.state = current
    trace.params = params.at(1.0)
    trace.sigma_samples = sample_sigma_min(system, sampled, sigma_states, cfg)
    logger.info(f"{system} path reached t=1 in {len(trace.rows) - 1} steps")
    return trace


def base_params(config: RunConfig, system: str) -> VortexParams:
    params = VortexParams(r1=config.r1, r2=config.r2, deg_l=config.deg_l)
    if system == "sys2":
        epsilon = config.epsilon
        if epsilon is None:
            epsilon = calibrate_epsilon(-1.0, params, config.solver.epsilon_min)
        params = replace(params, epsilon=epsilon)
    return params


def calibrated_t0(
    system: str,
    params: VortexParams,
    section: SectionData,
    config: RunConfig,
) -> Tuple[VortexParams, MetricState]:
    cfg = config.solver
    state0 = solve_t0(system, params, section, cfg)
    alpha = config.alpha
    if alpha is None:
        alpha = calibrate_alpha(state0, params, cfg.alpha_max)
    return replace(params, alpha=alpha), state0


def solve_path(system: str, section: SectionData, config: RunConfig) -> PathResult:
    """t = 0 solve, alpha and epsilon calibration, a0, then the path with epsilon restarts."""
    cfg = config.solver
    params = base_params(config, system)
    params, state0 = calibrated_t0(system, params, section, config)

    lap_psi_lower = None
    if system == "sys2":
        lap_psi_lower = state0.lap_psi.min() - cfg.lap_psi_buffer
        if config.epsilon is None:
            wanted = calibrate_epsilon(lap_psi_lower, params, cfg.epsilon_min)
            if wanted > params.epsilon:
                logger.info(f"Raising epsilon {params.epsilon:g} -> {wanted:g}")
                params, state0 = calibrated_t0(
                    system, replace(params, epsilon=wanted), section, config
                )
                lap_psi_lower = state0.lap_psi.min() - cfg.lap_psi_buffer
        logger.info(f"Calibrated epsilon = {params.epsilon:g}")

    restarts = 0
    while True:
        rhs = compute_rhs_t0(state0, params)
        try:
            trace = continue_path(
                system,
                state0,
                params,
                rhs,
                cfg,
                snapshot_times=config.snapshot_times,
                sigma_states=config.sigma_states,
                lap_psi_lower=lap_psi_lower,
                record_timings=config.record_timings,
            )
            return PathResult(system, params, state0, rhs, trace, lap_psi_lower, restarts)
        except EpsilonTooSmall as e:
            if config.epsilon is not None or restarts >= cfg.max_restarts:
                raise
            restarts += 1
            observed = e.details.get("lap_psi_min", lap_psi_lower)
            lower = min(observed, lap_psi_lower) - cfg.lap_psi_buffer
            epsilon = max(
                2.0 * params.epsilon, calibrate_epsilon(lower, params, cfg.epsilon_min)
            )
            logger.warning(f"Restart {restarts}: epsilon {params.epsilon:g} -> {epsilon:g}")
            params, state0 = calibrated_t0(
                system, replace(params, epsilon=epsilon), section, config
            )
            lap_psi_lower = state0.lap_psi.min() - cfg.lap_psi_buffer


def run_summary(result: PathResult) -> Dict[str, Any]:
    """Endpoint extrema and calibration data for summary.json."""
    state = result.trace.state
    tracker = result.trace.tracker
    return {
        "system": result.system,
        "alpha": result.params.alpha,
        "epsilon": result.params.epsilon,
        "restarts": result.restarts,
        "lap_psi_lower": result.lap_psi_lower,
        "steps": len(result.trace.rows) - 1,
        "final_t": result.trace.final_t,
        "endpoint": {
            "psi_min": state.psi.min(),
            "psi_max": state.psi.max(),
            "f_min": state.f.min(),
            "f_max": state.f.max(),
            "lap_f_min": state.lap_f.min(),
            "lap_f_max": state.lap_f.max(),
            "lap_psi_min": state.lap_psi.min(),
            "lap_psi_max": state.lap_psi.max(),
            "phig2_max": state.phig2.max(),
            "eps_psi_sup": result.params.epsilon * state.psi.sup(),
        },
        "t0": {
            "psi_min": result.state0.psi.min(),
            "psi_max": result.state0.psi.max(),
            "eps_psi_sup": result.params.epsilon * result.state0.psi.sup(),
            "a0_min": result.rhs.a0.min(),
            "a0_max": result.rhs.a0.max(),
        },
        "path_sup": {name: tracker.path_sup(name) for name in tracker.history},
        "sigma_min": [{"t": t, "sigma_min": s} for t, s in result.trace.sigma_samples],
    }
