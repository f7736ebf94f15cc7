import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np

from ..geometry.torus import integrate
from ..model.vortex import (
    MetricState,
    RhsData,
    VortexParams,
    epsilon_condition,
    residual_sys1,
    residual_sys2,
)
from ..utils.errors import EllipticityLost
from .linearization import ellipticity_check

logger = logging.getLogger(__name__)

UNIFORMITY_FACTOR = 10.0
COMPAT_FLOOR = 1e-10


@dataclass
class CheckResult:
    measured: float
    bound: float
    margin: float
    passed: bool

    def to_dict(self) -> Dict[str, Any]:
        return {
            "measured": self.measured,
            "bound": self.bound,
            "margin": self.margin,
            "passed": self.passed,
        }


@dataclass
class BoundsReport:
    """Named check results at one state."""

    checks: Dict[str, CheckResult] = field(default_factory=dict)
    report_tol: float = 1e-9

    def add(self, name: str, measured: float, bound: float, margin: float):
        self.checks[name] = CheckResult(
            float(measured), float(bound), float(margin), bool(margin >= -self.report_tol)
        )

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks.values())

    def failures(self) -> List[str]:
        return [name for name, check in self.checks.items() if not check.passed]

    def margins(self) -> Dict[str, float]:
        return {name: check.margin for name, check in self.checks.items()}

    def to_dict(self) -> Dict[str, Any]:
        return {name: check.to_dict() for name, check in self.checks.items()}


@dataclass
class SupTracker:
    """Realized path suprema, checked against 10x their running median."""

    history: Dict[str, List[float]] = field(default_factory=dict)

    def bound(self, name: str, value: float) -> float:
        values = self.history.get(name, []) + [value]
        return UNIFORMITY_FACTOR * float(np.median(values))

    def record(self, name: str, value: float):
        self.history.setdefault(name, []).append(float(value))

    def path_sup(self, name: str) -> float:
        values = self.history.get(name, [])
        return max(values) if values else 0.0


def tracked_quantities(
    state: MetricState, params: VortexParams, system: str
) -> Dict[str, float]:
    quantities = {
        "sup_lap_psi": state.lap_psi.sup(),
        "sup_lap_f": state.lap_f.sup(),
        "sup_f": state.f.sup(),
    }
    if system == "sys2":
        quantities["sup_eps_psi"] = params.epsilon * state.psi.sup()
        quantities["min_eps_psi"] = abs(params.epsilon * state.psi.min())
    return quantities


def psi_equation_residual(
    state: MetricState, params: VortexParams, rhs: RhsData, system: str
):
    if system == "sys1":
        return residual_sys1(state, params, which="psi_eq")
    return residual_sys2(state, params, rhs)[1]


def check_bounds(
    state: MetricState,
    params: VortexParams,
    rhs: RhsData,
    system: str,
    report_tol: float = 1e-9,
    newton_tol: float = 1e-10,
    grad_tol: float = 1e-6,
    tracker: Optional[SupTracker] = None,
) -> BoundsReport:
    """Evaluate every a-priori bound at state; the caller decides on rejection."""
    r1, r2 = params.r1, params.r2
    sigma = params.sigma
    report = BoundsReport(report_tol=report_tol)

    max_p = state.phig2.max()
    report.add("phig2_below_one", max_p, 1.0, 1.0 - max_p)

    low_g = state.grad.min()
    report.add("grad_nonnegative", low_g, -grad_tol, low_g + grad_tol)

    if system == "sys1":
        scale = (2 * r1 + 1) * (4 * r2 + 2)
        upper = (2 * r2 + 1) / scale
        lower = -(2 * r1 + 1) / scale
        report.add("psi_upper", state.psi.max(), upper, upper - state.psi.max())
        report.add("psi_lower", state.psi.min(), lower, state.psi.min() - lower)
    else:
        bound = 1.0 / (2 * (2 * r1 + 1))
        top = params.epsilon * state.psi.max()
        report.add("eps_psi_upper", top, bound, bound - top)

    branch = state.lap_f.values + r1 + sigma * (2 * r1 + 1)
    report.add("branch", float(np.min(branch)), 0.0, float(np.min(branch)))

    if system == "sys2":
        eps_margin = epsilon_condition(state, params).min()
        report.add("epsilon_condition", eps_margin, 0.0, eps_margin)

    a0_min = rhs.a0.min()
    report.add("a0_positive", a0_min, 0.0, a0_min)

    compat = abs(
        integrate(psi_equation_residual(state, params, rhs, system))
        / state.grid.total_area
    )
    compat_bound = max(COMPAT_FLOOR, newton_tol)
    report.add("integral_compatibility", compat, compat_bound, compat_bound - compat)

    det_min = ellipticity_check(state, params, s=1.0).min()
    report.add("ellipticity", det_min, 0.0, det_min)

    tracker = tracker or SupTracker()
    for name, value in tracked_quantities(state, params, system).items():
        bound = tracker.bound(name, value)
        report.add(f"uniform_{name}", value, bound, bound - value)

    if not report.passed:
        logger.debug(f"Bounds failed at t={params.t:.4f}: {report.failures()}")
    return report


def require_elliptic(report: BoundsReport, t: float):
    """Raise EllipticityLost when the principal determinant min is not positive."""
    check = report.checks.get("ellipticity")
    if check is not None and check.measured <= 0.0:
        logger.error(f"Ellipticity lost at t={t:.6f}: min det = {check.measured:.3e}")
        raise EllipticityLost(
            f"principal determinant reached {check.measured:.3e} at t = {t:.6f}",
            {"t": t, "min_det": check.measured},
        )
