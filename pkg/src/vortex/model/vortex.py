import logging
from dataclasses import dataclass, replace
from typing import Iterator, Optional, Tuple

import numpy as np

from ..geometry.theta import SectionData
from ..geometry.torus import ScalarField, TorusGrid, laplacian_values
from ..utils.errors import (
    CalibrationError,
    ModelError,
    NegativityError,
    PositivityError,
)

logger = logging.getLogger(__name__)

ALPHA_SAFETY = 1.5


@dataclass(frozen=True)
class VortexParams:
    """Ranks r1, r2, shifts alpha and epsilon, and the path parameter t."""

    r1: int = 1
    r2: int = 1
    alpha: float = 0.0
    epsilon: float = 1.0
    t: float = 0.0
    deg_l: int = 1

    def __post_init__(self):
        if self.r1 < 1 or self.r2 < 1:
            raise ModelError(
                "r1 and r2 must be positive integers", {"r1": self.r1, "r2": self.r2}
            )
        if self.alpha < 0:
            raise ModelError("alpha must be >= 0", {"alpha": self.alpha})
        if not self.epsilon > 0:
            raise ModelError("epsilon must be > 0", {"epsilon": self.epsilon})
        if not 0.0 <= self.t <= 1.0:
            raise ModelError("t must lie in [0, 1]", {"t": self.t})

    @property
    def sigma(self) -> float:
        """Shift alpha (1 - t)."""
        return self.alpha * (1.0 - self.t)

    @property
    def kappa(self) -> float:
        return (2 * self.r1 + 1) / (2 * self.r2 + 1)

    @property
    def epsilon_scale(self) -> float:
        """K in the epsilon term K * eps * psi of the second system."""
        return 2.0 * (2 * self.r1 + 1) * (4 * self.r2 + 2) * (2 * self.alpha + 1)

    def at(self, t: float) -> "VortexParams":
        return replace(self, t=float(min(max(t, 0.0), 1.0)))


@dataclass(frozen=True)
class MetricState:
    """The pair (f, psi) with derived Laplacians, |phi|^2_g and gradient density."""

    f: ScalarField
    psi: ScalarField
    section: SectionData
    lap_f: ScalarField
    lap_psi: ScalarField
    phig2: ScalarField
    grad: ScalarField

    @classmethod
    def build(
        cls, f: ScalarField, psi: ScalarField, section: SectionData
    ) -> "MetricState":
        grid = section.grid
        lap_f = f.with_values(laplacian_values(f.values, grid))
        lap_psi = psi.with_values(laplacian_values(psi.values, grid))
        p = phi_g2(psi, section)
        grad = p.with_values(
            laplacian_values(p.values, grid) + (1.0 + lap_psi.values) * p.values
        )
        return cls(f, psi, section, lap_f, lap_psi, p, grad)

    @classmethod
    def from_arrays(
        cls, f: np.ndarray, psi: np.ndarray, section: SectionData
    ) -> "MetricState":
        grid = section.grid
        return cls.build(ScalarField(grid, f), ScalarField(grid, psi), section)

    @classmethod
    def constant(
        cls, f: float, psi: float, section: SectionData
    ) -> "MetricState":
        grid = section.grid
        return cls.build(
            ScalarField.constant(grid, f), ScalarField.constant(grid, psi), section
        )

    @property
    def grid(self) -> TorusGrid:
        return self.section.grid

    def flat(self) -> np.ndarray:
        """Unknowns stacked f first, then psi."""
        return np.concatenate([self.f.values.ravel(), self.psi.values.ravel()])


@dataclass(frozen=True)
class RhsData:
    """Right-hand side of the determinant equation, frozen at t = 0."""

    a0: ScalarField


def phi_g2(psi: ScalarField, section: SectionData) -> ScalarField:
    return psi.with_values(np.exp(-psi.values) * section.phik2.values)


def grad_term(state: MetricState, grad_tol: float = 1e-6) -> ScalarField:
    """Gradient density Delta|phi|^2_g + (1 + Delta psi)|phi|^2_g, checked for sign."""
    low = state.grad.min()
    if low < -grad_tol:
        node = state.grad.argmin()
        logger.error(f"Gradient density {low:.3e} below -{grad_tol:.1e} at node {node}")
        raise NegativityError(
            f"gradient density dips to {low:.3e}",
            {"node": list(node), "value": low, "grad_tol": grad_tol},
        )
    return state.grad


def lhs_factors(
    state: MetricState, params: VortexParams, sigma: Optional[float] = None
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """The four factors (a1, c1, a2, c2) of the determinant equation at shift sigma."""
    if sigma is None:
        sigma = params.sigma
    r1, r2 = params.r1, params.r2
    lf = state.lap_f.values
    lp = state.lap_psi.values
    p = state.phig2.values
    a1 = lf + lp + (r1 + 1) + sigma * (2 * r1 + 1)
    c1 = 2 * r2 + p + sigma * (4 * r2 + 2)
    a2 = lf + r1 + sigma * (2 * r1 + 1)
    c2 = (2 * r2 + 2) - p + sigma * (4 * r2 + 2)
    return a1, c1, a2, c2


def determinant_lhs(
    state: MetricState, params: VortexParams, sigma: Optional[float] = None
) -> np.ndarray:
    """c1 a2 (a1 c2 + G), the factorized left side."""
    a1, c1, a2, c2 = lhs_factors(state, params, sigma)
    return c1 * a2 * (a1 * c2 + state.grad.values)


def residual_sys1(
    state: MetricState,
    params: VortexParams,
    rhs: Optional[RhsData] = None,
    which: str = "psi_eq",
) -> ScalarField:
    r1, r2 = params.r1, params.r2
    if which == "psi_eq":
        values = (
            (2 * r1 + 1) * (state.phig2.values - 1.0)
            + (state.lap_psi.values + 1.0) * (2 * r2 + 1)
            - (2 * r1 + 1) * (4 * r2 + 2) * state.psi.values
        )
        return state.psi.with_values(values)
    if which == "f_eq":
        if rhs is None:
            raise ModelError("f_eq residual needs the frozen right-hand side")
        return state.f.with_values(determinant_lhs(state, params) - rhs.a0.values)
    raise ModelError(f"unknown equation {which}", {"which": which})


def residual_sys2(
    state: MetricState, params: VortexParams, rhs: RhsData
) -> Tuple[ScalarField, ScalarField]:
    r1, r2 = params.r1, params.r2
    sigma = params.sigma
    first = determinant_lhs(state, params) - rhs.a0.values
    lf = state.lap_f.values
    lp = state.lap_psi.values
    second = (
        2.0 * (2.0 * lf + lp + (1 + 2 * sigma) * (2 * r1 + 1)) * (state.phig2.values - 1.0)
        + (lp + 1.0) * (1 + 2 * sigma) * (4 * r2 + 2)
        - params.epsilon_scale * params.epsilon * state.psi.values
    )
    return state.f.with_values(first), state.psi.with_values(second)


def residual_s_path(
    psi: ScalarField,
    section: SectionData,
    params: VortexParams,
    s: float,
    system: str = "sys1",
) -> ScalarField:
    """L_s(psi) = Delta psi + 1 - s (1 - |phi|^2_g) kappa - 2 (2 r1 + 1) eps_hat psi."""
    eps_hat = params.epsilon if system == "sys2" else 1.0
    p = np.exp(-psi.values) * section.phik2.values
    values = (
        laplacian_values(psi.values, section.grid)
        + 1.0
        - s * (1.0 - p) * params.kappa
        - 2.0 * (2 * params.r1 + 1) * eps_hat * psi.values
    )
    return psi.with_values(values)


def s_path_start(params: VortexParams, system: str = "sys1") -> float:
    """Constant solution of L_0 = 0."""
    eps_hat = params.epsilon if system == "sys2" else 1.0
    return 1.0 / (2.0 * (2 * params.r1 + 1) * eps_hat)


def epsilon_condition(state: MetricState, params: VortexParams) -> ScalarField:
    """Delta psi + 1 + K eps, which must stay positive along a second-system path."""
    return state.lap_psi.with_values(
        state.lap_psi.values + 1.0 + params.epsilon_scale * params.epsilon
    )


def compute_rhs_t0(state0: MetricState, params: VortexParams) -> RhsData:
    """Freeze a0 = left side at t = 0."""
    a0 = state0.f.with_values(determinant_lhs(state0, params, sigma=params.alpha))
    low = a0.min()
    if low <= 0:
        node = a0.argmin()
        logger.error(f"a0 not positive: min {low:.3e} at node {node}")
        raise PositivityError(
            f"a0 has minimum {low:.3e} <= 0; alpha too small",
            {"node": list(node), "min_a0": low, "alpha": params.alpha},
        )
    logger.info(f"Frozen a0: min {low:.6g}, max {a0.max():.6g}")
    return RhsData(a0)


def _alpha_ladder(alpha_max: float) -> Iterator[float]:
    yield 0.0
    value = 0.5
    while value <= alpha_max:
        yield value
        value *= 2.0


def alpha_conditions_hold(state0: MetricState, params: VortexParams, alpha: float) -> bool:
    a1, c1, a2, c2 = lhs_factors(state0, params, sigma=alpha)
    checks = (a1, c1, a2, c2, a1 * c2 + state0.grad.values)
    return all(float(np.min(c)) > 0 for c in checks)


def calibrate_alpha(
    state0: MetricState, params: VortexParams, alpha_max: float = 64.0
) -> float:
    """Smallest ladder value passing the t = 0 positivity conditions, times 1.5."""
    for alpha in _alpha_ladder(alpha_max):
        if alpha_conditions_hold(state0, params, alpha):
            calibrated = ALPHA_SAFETY * alpha
            logger.info(f"Calibrated alpha = {calibrated:g} (ladder value {alpha:g})")
            return calibrated
        logger.debug(f"alpha = {alpha:g} rejected")
    raise CalibrationError(
        f"no alpha <= {alpha_max:g} satisfies the t = 0 positivity conditions",
        {"alpha_max": alpha_max},
    )


def calibrate_epsilon(
    lap_psi_lower: float, params: VortexParams, epsilon_min: float = 1.0
) -> float:
    """eps = 2 max(eps_min, (|lower| + 1) / (2 (2r1+1)(4r2+2)(2 alpha+1)))."""
    needed = (abs(lap_psi_lower) + 1.0) / params.epsilon_scale
    return 2.0 * max(epsilon_min, needed)
