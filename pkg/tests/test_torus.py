import numpy as np
import pytest

from src.vortex.geometry.torus import (
    ScalarField,
    TorusGrid,
    green_kernel,
    green_solve,
    integrate,
    interpolate,
    laplacian,
    mean_zero,
    poisson_solve,
    smooth_random_field,
)
from src.vortex.utils.errors import CompatibilityError, FieldError


def band_limited(x, y):
    return np.cos(2 * np.pi * x) + 0.5 * np.sin(4 * np.pi * y) * np.cos(2 * np.pi * (x + y))


@pytest.mark.parametrize("n", [8, 15, 17])
def test_grid_rejects_bad_sizes(n):
    with pytest.raises(FieldError):
        TorusGrid(n)


def test_node_weights_sum_to_area(grid16):
    assert grid16.weight * grid16.n**2 == pytest.approx(2 * np.pi)
    assert integrate(ScalarField.constant(grid16, 1.0)) == pytest.approx(2 * np.pi)


def test_field_is_read_only_and_finite(grid16):
    field = ScalarField.zeros(grid16)
    with pytest.raises(ValueError):
        field.values[0, 0] = 1.0

    values = np.zeros(grid16.shape)
    values[3, 4] = np.nan
    with pytest.raises(FieldError) as exc:
        ScalarField(grid16, values)
    assert exc.value.details["node"] == [3, 4]

    with pytest.raises(FieldError):
        ScalarField(grid16, np.zeros((16, 8)))


def test_laplacian_of_single_mode(grid16):
    u = ScalarField.from_function(grid16, lambda x, y: np.cos(2 * np.pi * x))
    expected = -np.pi * u.values
    np.testing.assert_allclose(laplacian(u).values, expected, atol=1e-12)


def test_laplacian_scales_with_degree():
    grid = TorusGrid(16, deg_l=2)
    u = ScalarField.from_function(grid, lambda x, y: np.sin(2 * np.pi * y))
    np.testing.assert_allclose(laplacian(u).values, -0.5 * np.pi * u.values, atol=1e-12)


def test_poisson_solve_inverts_laplacian(grid16, rng):
    u = smooth_random_field(grid16, rng, mean_zero=True)
    recovered = poisson_solve(laplacian(u), target_mean=0.3)
    np.testing.assert_allclose(recovered.values, u.values + 0.3, atol=1e-12)
    assert recovered.mean() == pytest.approx(0.3)


def test_poisson_solve_rejects_incompatible_rhs(grid16):
    with pytest.raises(CompatibilityError) as exc:
        poisson_solve(ScalarField.constant(grid16, 1e-3))
    assert exc.value.details["mean"] == pytest.approx(1e-3)


def test_green_solve_matches_spectral_solve(grid16, rng):
    rhs = mean_zero(smooth_random_field(grid16, rng, k_max=4))
    spectral = poisson_solve(rhs, target_mean=-0.2)
    green = green_solve(rhs, mean=-0.2)
    np.testing.assert_allclose(green.values, spectral.values, atol=1e-10)


def test_green_kernel_is_mean_zero_and_even(grid16):
    kernel = green_kernel(grid16)
    assert abs(np.sum(kernel)) < 1e-10
    flipped = np.roll(kernel[::-1, ::-1], 1, axis=(0, 1))
    np.testing.assert_allclose(kernel, flipped, atol=1e-12)
    np.testing.assert_allclose(kernel, kernel.T, atol=1e-12)


def test_interpolate_is_exact_for_band_limited_fields(grid16):
    coarse = ScalarField.from_function(grid16, band_limited)
    fine = interpolate(coarse, 32)
    expected = ScalarField.from_function(TorusGrid(32), band_limited)
    np.testing.assert_allclose(fine.values, expected.values, atol=1e-12)
    np.testing.assert_allclose(interpolate(fine, 16).values, coarse.values, atol=1e-12)


def test_smooth_random_field_amplitude(grid16, rng):
    u = smooth_random_field(grid16, rng, mean_zero=True, amplitude=0.25)
    assert u.sup() == pytest.approx(0.25)
    assert u.mean() == pytest.approx(0.0, abs=1e-14)
