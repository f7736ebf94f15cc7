import numpy as np
import pytest

from src.vortex.geometry.theta import (
    SECTION_MAX,
    build_section,
    build_theta_section,
    covariant_density,
    evaluate_density,
    raw_integral,
    section_curvature,
    synthetic_section,
    truncation_order,
)
from src.vortex.geometry.torus import ScalarField, TorusGrid, integrate
from src.vortex.model.vortex import MetricState
from src.vortex.utils.errors import SectionError, TruncationError


def theta_density(x, y, m_max=10):
    """|theta(x + i y)|^2 exp(-2 pi y^2) straight from the Fourier series."""
    m = np.arange(-m_max, m_max + 1)
    z = x[:, None, None] + 1j * y[None, :, None]
    theta = np.sum(np.exp(-np.pi * m**2) * np.exp(2j * np.pi * m * z), axis=-1)
    return np.abs(theta) ** 2 * np.exp(-2 * np.pi * y[None, :] ** 2)


def test_truncation_order_is_minimal():
    m = truncation_order(1e-15)
    assert m == 4
    assert 2.5 * np.exp(-np.pi * m**2) < 1e-15
    assert 2.5 * np.exp(-np.pi * (m - 1) ** 2) >= 1e-15


@pytest.mark.parametrize("tol", [0.0, -1.0, float("nan"), 1e-320])
def test_truncation_order_rejects_unusable_tolerance(tol):
    with pytest.raises(TruncationError):
        truncation_order(tol)


def test_density_matches_theta_series():
    x = np.linspace(0.0, 1.0, 7, endpoint=False)
    y = np.linspace(0.0, 1.0, 5, endpoint=False)
    np.testing.assert_allclose(evaluate_density(x, y), theta_density(x, y), atol=1e-14)


def test_density_is_doubly_periodic():
    x = np.array([0.1, 0.37, 0.8])
    y = np.array([0.05, 0.5, 0.93])
    base = evaluate_density(x, y, m_max=8)
    np.testing.assert_allclose(evaluate_density(x + 1.0, y, m_max=8), base, atol=1e-13)
    np.testing.assert_allclose(evaluate_density(x, y + 1.0, m_max=8), base, atol=1e-13)


def test_theta_section_normalization(theta16):
    phik2 = theta16.phik2
    assert phik2.max() == pytest.approx(SECTION_MAX)
    assert phik2.argmin() == (8, 8)
    assert phik2.min() < 1e-20
    assert integrate(phik2) == pytest.approx(
        theta16.rescale_factor * 2 * np.pi * raw_integral(), rel=1e-10
    )
    assert integrate(phik2) == pytest.approx(
        theta16.rescale_factor * np.pi * np.sqrt(2.0), rel=1e-10
    )


def test_theta_section_needs_degree_one():
    with pytest.raises(SectionError):
        build_theta_section(TorusGrid(16, deg_l=2))


def test_build_section_kinds(grid16):
    assert build_section("zero", grid16).phik2.sup() == 0.0
    assert build_section("theta", grid16).kind == "theta"
    with pytest.raises(SectionError):
        build_section("gaussian", grid16)


def test_synthetic_section_rejects_negative_density(grid16):
    with pytest.raises(SectionError):
        synthetic_section(ScalarField.constant(grid16, -0.1))


def test_covariant_density_matches_gradient_term(theta32):
    grid = theta32.grid
    state = MetricState.build(ScalarField.zeros(grid), ScalarField.zeros(grid), theta32)
    expected = covariant_density(theta32)
    np.testing.assert_allclose(state.grad.values, expected.values, atol=1e-9)
    assert expected.min() >= 0.0


def test_section_curvature_is_constant_away_from_zero(theta16):
    values, mask = section_curvature(theta16)
    assert not mask[8, 8]
    assert np.isnan(values[8, 8])
    np.testing.assert_allclose(values[mask], 1.0, atol=1e-9)


def test_section_curvature_needs_theta(zero16):
    with pytest.raises(SectionError):
        section_curvature(zero16)
