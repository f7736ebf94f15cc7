import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.linalg import null_space
from scipy.sparse.linalg import LinearOperator as ScipyOperator
from scipy.sparse.linalg import gmres

from ..geometry.torus import (
    ScalarField,
    TorusGrid,
    laplace_symbol,
    laplacian_values,
    poisson_values,
    smooth_random_field,
)
from ..model.vortex import (
    MetricState,
    RhsData,
    VortexParams,
    lhs_factors,
    residual_s_path,
    residual_sys1,
    residual_sys2,
)
from ..utils.errors import SingularJacobian, SizeError, SolverError

logger = logging.getLogger(__name__)

TAGS = ("sys1_psi", "sys1_f", "sys2_coupled", "s_path")
DENSE_MAX_N = 24
FD_STEP = 1e-6

Vector = np.ndarray


@dataclass
class LinearOperator:
    """Jacobian of one residual, applied matrix-free on flat nodal vectors."""

    apply: Callable[[Vector], Vector]
    tag: str
    grid: TorusGrid
    size: int
    precondition: Optional[Callable[[Vector], Vector]] = None
    direct_solve: Optional[Callable[[Vector], Vector]] = None

    def __call__(self, v: Vector) -> Vector:
        return self.apply(v)

    @property
    def f_size(self) -> int:
        """Length of the leading f block (0 when f is not an unknown)."""
        if self.tag == "sys1_f":
            return self.size
        if self.tag == "sys2_coupled":
            return self.size // 2
        return 0

    def as_scipy(self) -> ScipyOperator:
        return ScipyOperator((self.size, self.size), matvec=self.apply, dtype=float)

    def solve(self, rhs: Vector, rtol: float = 1e-12, maxiter: int = 400) -> Vector:
        """Solve J x = rhs; GMRES with the spectral preconditioner unless a direct solve exists."""
        if self.direct_solve is not None:
            return self.direct_solve(rhs)
        rhs_norm = float(np.linalg.norm(rhs))
        if rhs_norm == 0.0:
            return np.zeros_like(rhs)
        preconditioner = None
        if self.precondition is not None:
            preconditioner = ScipyOperator(
                (self.size, self.size), matvec=self.precondition, dtype=float
            )
        x, info = gmres(
            self.as_scipy(),
            rhs,
            rtol=rtol,
            atol=0.0,
            restart=min(60, self.size),
            maxiter=maxiter,
            M=preconditioner,
        )
        achieved = float(np.linalg.norm(self.apply(x) - rhs))
        if not np.all(np.isfinite(x)) or achieved >= rhs_norm:
            logger.error(f"GMRES stagnated on {self.tag}: info={info}")
            raise SingularJacobian(
                f"iterative solve for {self.tag} made no progress",
                {"tag": self.tag, "info": int(info), "residual": achieved},
            )
        if info != 0:
            logger.debug(
                f"GMRES on {self.tag} stopped at relative residual {achieved / rhs_norm:.2e}"
            )
        return x


def _mean_zero_f_solve(
    grid: TorusGrid, coefficient: np.ndarray
) -> Callable[[Vector], Vector]:
    """Pointwise divide by A, project to mean zero, invert the Laplacian."""

    def solve(rhs: Vector) -> Vector:
        u = rhs.reshape(grid.shape) / coefficient
        u = u - np.mean(u)
        return poisson_values(u, grid).ravel()

    return solve


def _spectral_scalar_inverse(grid: TorusGrid, scale: float, shift: float):
    """Inverse of scale * Delta + shift, mode by mode."""
    denom = scale * laplace_symbol(grid.n, grid.deg_l) + shift
    n = grid.n

    def apply(v: Vector) -> Vector:
        coeffs = np.fft.rfft2(v.reshape(grid.shape)) / denom
        return np.fft.irfft2(coeffs, s=(n, n)).ravel()

    return apply


def _spectral_block_inverse(
    grid: TorusGrid, p11: float, p12: float, p21: float, p22: float, z22: float
):
    """Inverse of [[p11 D, p12 D], [p21 D, p22 D + z22]] per Fourier mode (f block zero at mode 0)."""
    lam = laplace_symbol(grid.n, grid.deg_l)
    n = grid.n
    m = n * n
    d11 = p11 * lam
    d12 = p12 * lam
    d21 = p21 * lam
    d22 = p22 * lam + z22
    det = d11 * d22 - d12 * d21
    zero_mode = lam == 0.0
    safe_det = np.where(zero_mode, 1.0, det)

    def apply(v: Vector) -> Vector:
        rf = np.fft.rfft2(v[:m].reshape(grid.shape))
        rp = np.fft.rfft2(v[m:].reshape(grid.shape))
        xf = np.where(zero_mode, 0.0, (d22 * rf - d12 * rp) / safe_det)
        xp = np.where(zero_mode, rp / z22, (d11 * rp - d21 * rf) / safe_det)
        return np.concatenate(
            [
                np.fft.irfft2(xf, s=(n, n)).ravel(),
                np.fft.irfft2(xp, s=(n, n)).ravel(),
            ]
        )

    return apply


def _linearize_sys1_psi(state: MetricState, params: VortexParams) -> LinearOperator:
    grid = state.grid
    r1, r2 = params.r1, params.r2
    p = state.phig2.values
    zeroth = -(2 * r1 + 1) * p - (2 * r1 + 1) * (4 * r2 + 2)

    def apply(v: Vector) -> Vector:
        dpsi = v.reshape(grid.shape)
        return ((2 * r2 + 1) * laplacian_values(dpsi, grid) + zeroth * dpsi).ravel()

    precondition = _spectral_scalar_inverse(grid, 2 * r2 + 1, float(np.mean(zeroth)))
    return LinearOperator(apply, "sys1_psi", grid, grid.n**2, precondition)


def f_coefficient(state: MetricState, params: VortexParams) -> np.ndarray:
    """A = c1 [c2 (2 Delta f + Delta psi + (1 + 2 sigma)(2 r1 + 1)) + G]."""
    sigma = params.sigma
    _, c1, _, c2 = lhs_factors(state, params)
    k = (
        2.0 * state.lap_f.values
        + state.lap_psi.values
        + (1 + 2 * sigma) * (2 * params.r1 + 1)
    )
    return c1 * (c2 * k + state.grad.values)


def _linearize_sys1_f(state: MetricState, params: VortexParams) -> LinearOperator:
    grid = state.grid
    coefficient = f_coefficient(state, params)

    def apply(v: Vector) -> Vector:
        return (coefficient * laplacian_values(v.reshape(grid.shape), grid)).ravel()

    direct = None
    if np.all(np.abs(coefficient) > 0):
        direct = _mean_zero_f_solve(grid, coefficient)
    return LinearOperator(apply, "sys1_f", grid, grid.n**2, None, direct)


def _linearize_sys2(state: MetricState, params: VortexParams) -> LinearOperator:
    grid = state.grid
    m = grid.n**2
    r1, r2 = params.r1, params.r2
    sigma = params.sigma
    p = state.phig2.values
    lap_psi = state.lap_psi.values
    a1, c1, a2, c2 = lhs_factors(state, params)
    q = a1 * c2 + state.grad.values
    k = 2.0 * state.lap_f.values + lap_psi + (1 + 2 * sigma) * (2 * r1 + 1)
    psi_scale = (1 + 2 * sigma) * (4 * r2 + 2)
    eps_term = params.epsilon_scale * params.epsilon

    def apply(v: Vector) -> Vector:
        df = v[:m].reshape(grid.shape)
        dpsi = v[m:].reshape(grid.shape)
        lf = laplacian_values(df, grid)
        lp = laplacian_values(dpsi, grid)
        dp = -p * dpsi
        dg = laplacian_values(dp, grid) + lp * p + (1.0 + lap_psi) * dp
        # d(a1, c1, a2, c2) = (lf + lp, dp, lf, -dp)
        dr1 = dp * a2 * q + c1 * lf * q + c1 * a2 * ((lf + lp) * c2 - a1 * dp + dg)
        dr2 = (
            2.0 * (2.0 * lf + lp) * (p - 1.0)
            + 2.0 * k * dp
            + lp * psi_scale
            - eps_term * dpsi
        )
        return np.concatenate([dr1.ravel(), dr2.ravel()])

    # mean-coefficient principal symbol; Delta(dp) and lp * p cancel at second order in dg
    p11 = float(np.mean(c1 * (q + a2 * c2)))
    p12 = float(np.mean(c1 * a2 * c2))
    p21 = float(np.mean(4.0 * (p - 1.0)))
    p22 = float(np.mean(2.0 * (p - 1.0) + psi_scale))
    z22 = float(np.mean(-2.0 * k * p - eps_term))
    precondition = _spectral_block_inverse(grid, p11, p12, p21, p22, z22)
    return LinearOperator(apply, "sys2_coupled", grid, 2 * m, precondition)


def _linearize_s_path(
    state: MetricState, params: VortexParams, s: float, system: str
) -> LinearOperator:
    grid = state.grid
    eps_hat = params.epsilon if system == "sys2" else 1.0
    zeroth = -s * params.kappa * state.phig2.values - 2.0 * (2 * params.r1 + 1) * eps_hat

    def apply(v: Vector) -> Vector:
        dpsi = v.reshape(grid.shape)
        return (laplacian_values(dpsi, grid) + zeroth * dpsi).ravel()

    precondition = _spectral_scalar_inverse(grid, 1.0, float(np.mean(zeroth)))
    return LinearOperator(apply, "s_path", grid, grid.n**2, precondition)


def linearize(
    state: MetricState,
    params: VortexParams,
    tag: str,
    s: float = 1.0,
    system: str = "sys1",
) -> LinearOperator:
    """Exact derivative of the discrete residual named by tag at state."""
    if tag == "sys1_psi":
        return _linearize_sys1_psi(state, params)
    if tag == "sys1_f":
        return _linearize_sys1_f(state, params)
    if tag == "sys2_coupled":
        return _linearize_sys2(state, params)
    if tag == "s_path":
        return _linearize_s_path(state, params, s, system)
    raise SolverError(f"unknown linearization tag {tag}", {"tag": tag})


def residual_function(
    state: MetricState,
    params: VortexParams,
    tag: str,
    rhs: Optional[RhsData] = None,
    s: float = 1.0,
    system: str = "sys1",
) -> Callable[[Vector], Vector]:
    """Residual of tag as a function of its flat unknowns, other fields frozen at state."""
    grid = state.grid
    section = state.section
    m = grid.n**2
    if rhs is None:
        rhs = RhsData(ScalarField.zeros(grid))

    if tag == "sys1_psi":

        def residual(x: Vector) -> Vector:
            trial = MetricState.from_arrays(state.f.values, x.reshape(grid.shape), section)
            return residual_sys1(trial, params, which="psi_eq").values.ravel()

    elif tag == "sys1_f":

        def residual(x: Vector) -> Vector:
            trial = MetricState.from_arrays(x.reshape(grid.shape), state.psi.values, section)
            return residual_sys1(trial, params, rhs, which="f_eq").values.ravel()

    elif tag == "sys2_coupled":

        def residual(x: Vector) -> Vector:
            trial = MetricState.from_arrays(
                x[:m].reshape(grid.shape), x[m:].reshape(grid.shape), section
            )
            first, second = residual_sys2(trial, params, rhs)
            return np.concatenate([first.values.ravel(), second.values.ravel()])

    elif tag == "s_path":

        def residual(x: Vector) -> Vector:
            psi = ScalarField(grid, x.reshape(grid.shape))
            return residual_s_path(psi, section, params, s, system).values.ravel()

    else:
        raise SolverError(f"unknown linearization tag {tag}", {"tag": tag})
    return residual


def unknowns(state: MetricState, tag: str) -> Vector:
    if tag == "sys1_f":
        return state.f.values.ravel().copy()
    if tag == "sys2_coupled":
        return state.flat()
    return state.psi.values.ravel().copy()


def assemble_dense(
    op: LinearOperator, grid: Optional[TorusGrid] = None, max_n: int = DENSE_MAX_N
) -> np.ndarray:
    """Matrix of op in the nodal basis, one apply per column."""
    grid = grid or op.grid
    if grid.n > max_n:
        raise SizeError(
            f"dense assembly refused for n = {grid.n} > {max_n}",
            {"n": grid.n, "max_n": max_n},
        )
    matrix = np.empty((op.size, op.size))
    basis = np.zeros(op.size)
    for k in range(op.size):
        basis[k] = 1.0
        matrix[:, k] = op.apply(basis)
        basis[k] = 0.0
    return matrix


def restricted_sigma_min(op: LinearOperator, max_n: int = DENSE_MAX_N) -> float:
    """Smallest singular value of op restricted to mean-zero f perturbations."""
    matrix = assemble_dense(op, max_n=max_n)
    if op.f_size:
        m = op.f_size
        q = null_space(np.ones((1, m)))
        rest = op.size - m
        basis = np.zeros((op.size, q.shape[1] + rest))
        basis[:m, : q.shape[1]] = q
        basis[m:, q.shape[1] :] = np.eye(rest)
        matrix = matrix @ basis
    return float(np.linalg.svd(matrix, compute_uv=False).min())


def ellipticity_check(
    state: MetricState, params: VortexParams, s: float = 1.0
) -> ScalarField:
    """Pointwise det(A) of the principal symbol of the coupled system along the s-family."""
    r1, r2 = params.r1, params.r2
    sigma = params.sigma
    p = state.phig2.values
    lf = state.lap_f.values
    lp = state.lap_psi.values
    g = state.grad.values
    first = 2 * r2 + s * p + sigma * (4 * r2 + 2)
    fourth = (2 * r2 + 2) - s * p + sigma * (4 * r2 + 2)
    a11 = first * (fourth * (2 * s * lf + s * lp + (1 + 2 * sigma) * (2 * r1 + 1)) + s * g)
    a12 = first * (s * lf + r1 + sigma * (2 * r1 + 1)) * fourth
    a21 = 4.0 * s * (p - 1.0)
    a22 = 2.0 * s * (p - 1.0) + (1 + 2 * sigma) * (4 * r2 + 2)
    return state.f.with_values(a11 * a22 - a12 * a21)


def _probe(grid: TorusGrid, rng: np.random.Generator, tag: str) -> Vector:
    if tag == "sys2_coupled":
        df = smooth_random_field(grid, rng, mean_zero=True).values.ravel()
        dpsi = smooth_random_field(grid, rng).values.ravel()
        return np.concatenate([df, dpsi])
    return smooth_random_field(grid, rng, mean_zero=(tag == "sys1_f")).values.ravel()


def fd_check(
    state: MetricState,
    params: VortexParams,
    tag: str,
    n_probes: int = 20,
    seed: int = 0,
    s: float = 1.0,
    system: str = "sys1",
    step: float = FD_STEP,
) -> float:
    """Max relative gap between J v and centered differences of the residual."""
    op = linearize(state, params, tag, s=s, system=system)
    residual = residual_function(state, params, tag, s=s, system=system)
    x0 = unknowns(state, tag)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_probes):
        v = _probe(state.grid, rng, tag)
        jv = op.apply(v)
        fd = (residual(x0 + step * v) - residual(x0 - step * v)) / (2.0 * step)
        gap = float(np.max(np.abs(jv - fd))) / max(float(np.max(np.abs(jv))), 1e-300)
        worst = max(worst, gap)
    logger.debug(f"fd_check {tag}: worst relative gap {worst:.2e} over {n_probes} probes")
    return worst
