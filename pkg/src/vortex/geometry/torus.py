import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Optional, Tuple

import numpy as np
from scipy.linalg import circulant

from ..utils.errors import CompatibilityError, FieldError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TorusGrid:
    """Square torus [0,1)^2 with n nodes per side and area form 2*pi*deg_l dx^dy."""

    n: int
    deg_l: int = 1

    def __post_init__(self):
        if self.n < 16 or self.n % 2:
            raise FieldError(
                f"grid size must be an even integer >= 16, got {self.n}", {"n": self.n}
            )
        if self.deg_l < 1:
            raise FieldError("deg_l must be a positive integer", {"deg_l": self.deg_l})

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def total_area(self) -> float:
        return 2.0 * np.pi * self.deg_l

    @property
    def weight(self) -> float:
        """Quadrature weight of a single node."""
        return self.total_area * self.h * self.h

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.n, self.n)

    @property
    def axis(self) -> np.ndarray:
        return np.arange(self.n) * self.h

    def nodes(self) -> Tuple[np.ndarray, np.ndarray]:
        """Coordinate arrays x[i, j] = i*h, y[i, j] = j*h."""
        return np.meshgrid(self.axis, self.axis, indexing="ij")


@dataclass(frozen=True)
class ScalarField:
    """Real grid function; values[i, j] is the value at (i*h, j*h)."""

    grid: TorusGrid
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.shape != self.grid.shape:
            raise FieldError(
                f"field shape {values.shape} does not match grid {self.grid.shape}",
                {"shape": list(values.shape), "n": self.grid.n},
            )
        if not np.all(np.isfinite(values)):
            bad = np.argwhere(~np.isfinite(values))[0]
            raise FieldError(
                "field has non-finite entries",
                {"node": [int(bad[0]), int(bad[1])]},
            )
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def constant(cls, grid: TorusGrid, value: float) -> "ScalarField":
        return cls(grid, np.full(grid.shape, float(value)))

    @classmethod
    def zeros(cls, grid: TorusGrid) -> "ScalarField":
        return cls.constant(grid, 0.0)

    @classmethod
    def from_function(
        cls, grid: TorusGrid, fn: Callable[[np.ndarray, np.ndarray], np.ndarray]
    ) -> "ScalarField":
        x, y = grid.nodes()
        return cls(grid, np.broadcast_to(fn(x, y), grid.shape))

    def with_values(self, values: np.ndarray) -> "ScalarField":
        return ScalarField(self.grid, values)

    def mean(self) -> float:
        """Mean with respect to the area form."""
        return float(np.mean(self.values))

    def sup(self) -> float:
        return float(np.max(np.abs(self.values)))

    def min(self) -> float:
        return float(np.min(self.values))

    def max(self) -> float:
        return float(np.max(self.values))

    def argmin(self) -> Tuple[int, int]:
        i, j = np.unravel_index(np.argmin(self.values), self.grid.shape)
        return int(i), int(j)

    def argmax(self) -> Tuple[int, int]:
        i, j = np.unravel_index(np.argmax(self.values), self.grid.shape)
        return int(i), int(j)

    def __add__(self, other):
        other_values = other.values if isinstance(other, ScalarField) else other
        return self.with_values(self.values + other_values)

    def __sub__(self, other):
        other_values = other.values if isinstance(other, ScalarField) else other
        return self.with_values(self.values - other_values)

    def __mul__(self, other):
        other_values = other.values if isinstance(other, ScalarField) else other
        return self.with_values(self.values * other_values)

    __rmul__ = __mul__

    def __neg__(self):
        return self.with_values(-self.values)


@lru_cache(maxsize=None)
def laplace_symbol(n: int, deg_l: int) -> np.ndarray:
    """Fourier symbol of the Laplacian on the rfft2 half-plane."""
    kx = np.fft.fftfreq(n, d=1.0 / n)
    ky = np.fft.rfftfreq(n, d=1.0 / n)
    symbol = -np.pi * (kx[:, None] ** 2 + ky[None, :] ** 2) / deg_l
    symbol.setflags(write=False)
    return symbol


@lru_cache(maxsize=None)
def _inverse_symbol(n: int, deg_l: int) -> np.ndarray:
    symbol = laplace_symbol(n, deg_l)
    inverse = np.zeros_like(symbol)
    nonzero = symbol != 0.0
    inverse[nonzero] = 1.0 / symbol[nonzero]
    inverse.setflags(write=False)
    return inverse


def _spectral_apply(values: np.ndarray, multiplier: np.ndarray) -> np.ndarray:
    n = values.shape[0]
    return np.fft.irfft2(np.fft.rfft2(values) * multiplier, s=(n, n))


def laplacian(u: ScalarField) -> ScalarField:
    """Delta u = (Euclidean Laplacian of u) / (4*pi*deg_l), applied spectrally."""
    grid = u.grid
    return u.with_values(_spectral_apply(u.values, laplace_symbol(grid.n, grid.deg_l)))


def laplacian_values(values: np.ndarray, grid: TorusGrid) -> np.ndarray:
    """Same as laplacian() on a bare array."""
    return _spectral_apply(values, laplace_symbol(grid.n, grid.deg_l))


def integrate(u: ScalarField) -> float:
    return float(np.sum(u.values) * u.grid.weight)


def _check_compatible(rhs: ScalarField, compat_tol: float) -> float:
    mean = rhs.mean()
    if abs(mean) > compat_tol:
        logger.error(f"Poisson right-hand side has mean {mean:.3e} > {compat_tol:.1e}")
        raise CompatibilityError(
            f"right-hand side mean {mean:.3e} exceeds compatibility tolerance",
            {"mean": mean, "compat_tol": compat_tol},
        )
    return mean


def poisson_solve(
    rhs: ScalarField, target_mean: float = 0.0, compat_tol: float = 1e-8
) -> ScalarField:
    """Solve Delta u = rhs - mean(rhs) with mean(u) = target_mean."""
    _check_compatible(rhs, compat_tol)
    grid = rhs.grid
    n = grid.n
    coeffs = np.fft.rfft2(rhs.values) * _inverse_symbol(n, grid.deg_l)
    coeffs[0, 0] = target_mean * n * n
    return rhs.with_values(np.fft.irfft2(coeffs, s=(n, n)))


def poisson_values(values: np.ndarray, grid: TorusGrid) -> np.ndarray:
    """Mean-zero inverse Laplacian of the mean-zero part of a bare array."""
    return _spectral_apply(values, _inverse_symbol(grid.n, grid.deg_l))


@lru_cache(maxsize=None)
def _green_table(n: int, deg_l: int) -> np.ndarray:
    weight = 2.0 * np.pi * deg_l / (n * n)
    kernel = np.fft.irfft2(_inverse_symbol(n, deg_l), s=(n, n)) / weight
    kernel.setflags(write=False)
    return kernel


def green_kernel(grid: TorusGrid) -> np.ndarray:
    """Mean-zero Green kernel G[p, q] = G((p*h, q*h), 0)."""
    return _green_table(grid.n, grid.deg_l)


def green_solve(
    rhs: ScalarField, mean: float = 0.0, compat_tol: float = 1e-8
) -> ScalarField:
    """Green representation: f(x) = mean + sum_y G(x - y) rhs(y) w."""
    _check_compatible(rhs, compat_tol)
    grid = rhs.grid
    kernel = green_kernel(grid)
    result = np.zeros(grid.shape)
    for p in range(grid.n):
        # rows shifted by p, then a circulant sum along the second axis
        shifted = np.roll(rhs.values, p, axis=0)
        result += shifted @ circulant(kernel[p]).T
    return rhs.with_values(mean + grid.weight * result)


def _resample_axis(coeffs: np.ndarray, n_new: int, axis: int) -> np.ndarray:
    n = coeffs.shape[axis]
    if n_new == n:
        return coeffs
    moved = np.moveaxis(coeffs, axis, 0)
    out = np.zeros((n_new,) + moved.shape[1:], dtype=complex)
    if n_new > n:
        half = n // 2
        out[:half] = moved[:half]
        out[n_new - half + 1 :] = moved[half + 1 :]
        # split the Nyquist mode so the result stays real
        out[half] = 0.5 * moved[half]
        out[n_new - half] = 0.5 * moved[half]
    else:
        half = n_new // 2
        out[:half] = moved[:half]
        out[half + 1 :] = moved[n - half + 1 :]
        out[half] = moved[half] + moved[n - half]
    return np.moveaxis(out, 0, axis)


def interpolate(u: ScalarField, n_new: int) -> ScalarField:
    """Trigonometric interpolation of u onto an n_new grid (zero padding or truncation)."""
    grid = u.grid
    target = TorusGrid(n_new, grid.deg_l)
    coeffs = np.fft.fft2(u.values) / (grid.n * grid.n)
    coeffs = _resample_axis(coeffs, n_new, 0)
    coeffs = _resample_axis(coeffs, n_new, 1)
    return ScalarField(target, np.real(np.fft.ifft2(coeffs)) * n_new * n_new)


def smooth_random_field(
    grid: TorusGrid,
    rng: np.random.Generator,
    k_max: int = 3,
    mean_zero: bool = False,
    amplitude: float = 1.0,
) -> ScalarField:
    """Band-limited random field (|k| <= k_max per axis) scaled to the given sup-norm."""
    x, y = grid.nodes()
    values = np.zeros(grid.shape)
    for kx in range(-k_max, k_max + 1):
        for ky in range(0, k_max + 1):
            phase = 2.0 * np.pi * (kx * x + ky * y)
            a, b = rng.uniform(-1.0, 1.0, size=2)
            values += a * np.cos(phase) + b * np.sin(phase)
    if mean_zero:
        values -= np.mean(values)
    scale = np.max(np.abs(values))
    if scale > 0:
        values *= amplitude / scale
    return ScalarField(grid, values)


def mean_zero(u: ScalarField, target_mean: Optional[float] = 0.0) -> ScalarField:
    """Shift u so its mean equals target_mean."""
    return u.with_values(u.values - u.mean() + target_mean)
