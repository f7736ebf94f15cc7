"""Theta-function section of the degree-one bundle on the square torus.

The section is evaluated in the quasi-periodic form

    S(x, y) = sum_m exp(-pi (m + y)^2) exp(2 pi i m x),

which satisfies |S|^2 = |theta(x + i y)|^2 exp(-2 pi y^2) with
theta(z) = sum_m exp(-pi m^2) exp(2 pi i m z). |S|^2 is doubly periodic
and vanishes only at (1/2, 1/2).
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from ..utils.errors import SectionError, TruncationError
from .torus import ScalarField, TorusGrid

logger = logging.getLogger(__name__)

SECTION_MAX = 0.5
MAX_TERMS = 64


@dataclass(frozen=True)
class SectionData:
    """|phi|^2_k on the grid plus the factor applied to reach sup = 1/2."""

    phik2: ScalarField
    rescale_factor: float
    kind: str = "theta"

    @property
    def grid(self) -> TorusGrid:
        return self.phik2.grid


def truncation_order(tail_tol: float = 1e-15) -> int:
    """Smallest M with 2.5 exp(-pi M^2) < tail_tol."""
    tail_tol = float(tail_tol)
    if not np.isfinite(tail_tol) or tail_tol < np.finfo(float).tiny:
        raise TruncationError(
            f"tail bound {tail_tol!r} is not a positive normal double",
            {"tail_tol": tail_tol},
        )
    m = int(np.ceil(np.sqrt(max(np.log(2.5 / tail_tol), 0.0) / np.pi)))
    while 2.5 * np.exp(-np.pi * m * m) >= tail_tol:
        m += 1
    if m > MAX_TERMS:
        raise TruncationError(
            f"tail bound {tail_tol:.1e} needs {m} terms (limit {MAX_TERMS})",
            {"tail_tol": tail_tol, "terms": m},
        )
    return m


def _series(
    x: np.ndarray, y: np.ndarray, m_max: int, y_power: int = 0
) -> np.ndarray:
    """sum_m (m+y)^p exp(-pi (m+y)^2) exp(2 pi i m x) on the outer grid x[i], y[j]."""
    m = np.arange(-m_max, m_max + 1)
    waves = np.exp(2j * np.pi * np.outer(x, m))
    shifted = m[None, :] + y[:, None]
    weights = shifted**y_power * np.exp(-np.pi * shifted**2)
    return waves @ weights.T


def _series_dx(x: np.ndarray, y: np.ndarray, m_max: int) -> np.ndarray:
    m = np.arange(-m_max, m_max + 1)
    waves = (2j * np.pi * m)[None, :] * np.exp(2j * np.pi * np.outer(x, m))
    shifted = m[None, :] + y[:, None]
    return waves @ np.exp(-np.pi * shifted**2).T


def _series_dxx(x: np.ndarray, y: np.ndarray, m_max: int) -> np.ndarray:
    m = np.arange(-m_max, m_max + 1)
    waves = -((2.0 * np.pi * m) ** 2)[None, :] * np.exp(2j * np.pi * np.outer(x, m))
    shifted = m[None, :] + y[:, None]
    return waves @ np.exp(-np.pi * shifted**2).T


def evaluate_density(
    x: np.ndarray,
    y: np.ndarray,
    m_max: Optional[int] = None,
    tail_tol: float = 1e-15,
) -> np.ndarray:
    """Unscaled |theta(x+iy)|^2 exp(-2 pi y^2) on the outer grid of 1-D arrays x, y."""
    if m_max is None:
        m_max = truncation_order(tail_tol)
    values = _series(np.asarray(x, float), np.asarray(y, float), m_max)
    return np.abs(values) ** 2


def build_theta_section(grid: TorusGrid, tail_tol: float = 1e-15) -> SectionData:
    """Evaluate the theta section and rescale so max |phi|^2_k = 1/2."""
    if grid.deg_l != 1:
        raise SectionError(
            f"theta section only available for deg_l = 1, got {grid.deg_l}",
            {"deg_l": grid.deg_l},
        )
    m_max = truncation_order(tail_tol)
    raw = evaluate_density(grid.axis, grid.axis, m_max=m_max)
    factor = SECTION_MAX / float(np.max(raw))
    logger.debug(f"Theta section: n={grid.n}, M={m_max}, rescale={factor:.6e}")
    return SectionData(ScalarField(grid, factor * raw), factor, "theta")


def build_zero_section(grid: TorusGrid) -> SectionData:
    """Degenerate mode: phi = 0."""
    return SectionData(ScalarField.zeros(grid), 1.0, "zero")


def synthetic_section(phik2: ScalarField) -> SectionData:
    """Wrap an arbitrary nonnegative field; used for analytic checks."""
    if phik2.min() < 0:
        raise SectionError("section density must be nonnegative")
    return SectionData(phik2, 1.0, "synthetic")


def build_section(kind: str, grid: TorusGrid) -> SectionData:
    if kind == "theta":
        return build_theta_section(grid)
    if kind == "zero":
        return build_zero_section(grid)
    raise SectionError(f"unknown section kind {kind}", {"kind": kind})


def raw_integral() -> float:
    """Exact integral of |theta(x+iy)|^2 exp(-2 pi y^2) over [0,1)^2."""
    return 1.0 / np.sqrt(2.0)


def covariant_density(section: SectionData, tail_tol: float = 1e-15) -> ScalarField:
    """Closed form of the gradient density at psi = 0: 4 pi c |sum_m (m+y) w_m e_m|^2."""
    if section.kind != "theta":
        raise SectionError("covariant density needs the theta section")
    grid = section.grid
    m_max = truncation_order(tail_tol)
    moment = _series(grid.axis, grid.axis, m_max, y_power=1)
    values = 4.0 * np.pi * section.rescale_factor * np.abs(moment) ** 2
    return ScalarField(grid, values)


def section_curvature(
    section: SectionData, floor: float = 1e-3, tail_tol: float = 1e-15
) -> Tuple[np.ndarray, np.ndarray]:
    """-Delta log |phi|^2_k from analytic series derivatives.

    Returns (values, mask); values are NaN where |phi|^2_k <= floor.
    """
    if section.kind != "theta":
        raise SectionError("section curvature needs the theta section")
    grid = section.grid
    m_max = truncation_order(tail_tol)
    x = y = grid.axis
    s = _series(x, y, m_max)
    moment1 = _series(x, y, m_max, y_power=1)
    moment2 = _series(x, y, m_max, y_power=2)
    s_x = _series_dx(x, y, m_max)
    s_xx = _series_dxx(x, y, m_max)
    s_y = -2.0 * np.pi * moment1
    s_yy = 4.0 * np.pi**2 * moment2 - 2.0 * np.pi * s

    mask = section.phik2.values > floor
    values = np.full(grid.shape, np.nan)
    ss = s[mask]
    log_lap = 2.0 * np.real(
        (s_xx[mask] + s_yy[mask]) / ss - (s_x[mask] ** 2 + s_y[mask] ** 2) / ss**2
    )
    values[mask] = -log_lap / (4.0 * np.pi * grid.deg_l)
    return values, mask
