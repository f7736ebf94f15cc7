import logging
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, Optional

import numpy as np

from ..geometry.torus import ScalarField
from ..utils.errors import NotPositive
from .vortex import MetricState, RhsData, VortexParams, lhs_factors

logger = logging.getLogger(__name__)

FIXED_ANGLES = (0.0, np.pi / 2, np.pi / 4)


@dataclass(frozen=True)
class CurvatureCoeffs:
    """Reduced curvature coefficients a1, c1, a2, c2 and gradient density g."""

    a1: ScalarField
    c1: ScalarField
    a2: ScalarField
    c2: ScalarField
    g: ScalarField
    shift: float = 0.0

    @classmethod
    def from_constants(
        cls, grid, a1: float, c1: float, a2: float, c2: float, g: float
    ) -> "CurvatureCoeffs":
        const = ScalarField.constant
        return cls(
            const(grid, a1), const(grid, c1), const(grid, a2), const(grid, c2), const(grid, g)
        )

    def product_form(self) -> np.ndarray:
        a1, c1, a2, c2, g = (v.values for v in (self.a1, self.c1, self.a2, self.c2, self.g))
        return a1 * c1 * a2 * c2 + g * c1 * a2

    def factorized_form(self) -> np.ndarray:
        a1, c1, a2, c2, g = (v.values for v in (self.a1, self.c1, self.a2, self.c2, self.g))
        return c1 * a2 * (a1 * c2 + g)


@dataclass
class IdentityCheck:
    factorization: float
    rhs_residual: Optional[float] = None


@dataclass
class PositivityReport:
    passed: bool
    n_samples: int
    minima: Dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def curvature_coeffs(
    state: MetricState, params: VortexParams, shift: Optional[float] = None
) -> CurvatureCoeffs:
    """Coefficients at the given shift (alpha (1 - t) when omitted)."""
    if shift is None:
        shift = params.sigma
    a1, c1, a2, c2 = lhs_factors(state, params, sigma=shift)
    wrap = state.f.with_values
    return CurvatureCoeffs(wrap(a1), wrap(c1), wrap(a2), wrap(c2), state.grad, shift)


def det_identity_check(
    coeffs: CurvatureCoeffs, rhs: Optional[RhsData] = None
) -> IdentityCheck:
    """Relative sup gap between product and factorized forms; sup |LHS - a0| if rhs given."""
    product = coeffs.product_form()
    factored = coeffs.factorized_form()
    scale = max(float(np.max(np.abs(product))), 1e-300)
    gap = float(np.max(np.abs(product - factored))) / scale
    residual = None
    if rhs is not None:
        residual = float(np.max(np.abs(factored - rhs.a0.values)))
    return IdentityCheck(gap, residual)


def _fail(check: str, field_values: np.ndarray, value: float, direction=None):
    node = np.unravel_index(np.argmin(field_values), field_values.shape)
    details = {"check": check, "node": [int(node[0]), int(node[1])], "value": value}
    if direction is not None:
        details["direction"] = direction
    logger.error(f"Positivity check '{check}' failed: {details}")
    raise NotPositive(f"{check} check failed with minimum {value:.3e}", details)


def positivity_check(
    coeffs: CurvatureCoeffs, n_samples: int = 64, seed: int = 0
) -> PositivityReport:
    """Diagonal, dual-Nakano surrogate and sampled Griffiths checks at every node."""
    a1, c1, a2, c2, g = (v.values for v in (coeffs.a1, coeffs.c1, coeffs.a2, coeffs.c2, coeffs.g))
    minima: Dict[str, float] = {}

    for name, values in (("a1", a1), ("c1", c1), ("a2", a2), ("c2", c2)):
        low = float(np.min(values))
        minima[f"diagonal_{name}"] = low
        if low <= 0:
            _fail(f"diagonal {name}", values, low)

    nakano = a1 * c2 + g
    low = float(np.min(nakano))
    minima["dual_nakano"] = low
    if low <= 0:
        _fail("dual-Nakano", nakano, low)

    # H(zeta) depends on zeta only through |zeta_1|^2 and |zeta_2|^2
    rng = np.random.default_rng(seed)
    angles = np.concatenate(
        [np.array(FIXED_ANGLES), rng.uniform(0.0, np.pi / 2, size=n_samples)]
    )
    h11_min = np.inf
    det_min = np.inf
    for theta in angles:
        w1 = np.cos(theta) ** 2
        w2 = np.sin(theta) ** 2
        h11 = a1 * w1 + c1 * w2
        h22 = a2 * w1 + c2 * w2
        det = h11 * h22 - g * w1 * w2
        direction = {"theta": float(theta)}
        if np.min(h11) <= 0:
            _fail("Griffiths H11", h11, float(np.min(h11)), direction)
        if np.min(det) <= 0:
            _fail("Griffiths det", det, float(np.min(det)), direction)
        h11_min = min(h11_min, float(np.min(h11)))
        det_min = min(det_min, float(np.min(det)))
    minima["griffiths_h11"] = h11_min
    minima["griffiths_det"] = det_min

    logger.info(f"Positivity check passed with {len(angles)} directions")
    return PositivityReport(True, int(n_samples), minima)
