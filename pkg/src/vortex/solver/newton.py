import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from ..utils.config import SolverConfig
from ..utils.errors import JacobianMismatch, NoConvergence

logger = logging.getLogger(__name__)

NORMALIZATIONS = ("none", "mean_zero_f")
MIN_DAMPING = 1.0 / 1024
PROBE_STEP = 1e-7
PROBE_TOL = 1e-4


@dataclass
class NewtonResult:
    """Converged iterate with its residual history."""

    x: np.ndarray
    iterations: int
    residual_history: List[float] = field(default_factory=list)
    kappa: Optional[float] = None

    @property
    def residual(self) -> float:
        return self.residual_history[-1]


def _sup(r: np.ndarray) -> float:
    if not np.all(np.isfinite(r)):
        return np.inf
    return float(np.max(np.abs(r))) if r.size else 0.0


def _solve_step(jacobian, rhs: np.ndarray, cfg: SolverConfig) -> np.ndarray:
    if hasattr(jacobian, "solve"):
        return jacobian.solve(rhs, rtol=cfg.gmres_rtol, maxiter=cfg.gmres_maxiter)
    return np.linalg.solve(np.atleast_2d(jacobian), rhs)


def _apply(jacobian, v: np.ndarray) -> np.ndarray:
    if hasattr(jacobian, "apply"):
        return jacobian.apply(v)
    return np.atleast_2d(jacobian) @ v


def probe_jacobian(
    residual_fn: Callable[[np.ndarray], np.ndarray],
    jacobian,
    x: np.ndarray,
    seed: int = 0,
) -> float:
    """Relative gap between J v and a centered difference along one random direction."""
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(x.shape)
    v /= np.max(np.abs(v))
    step = PROBE_STEP * max(1.0, float(np.max(np.abs(x))))
    jv = _apply(jacobian, v)
    fd = (residual_fn(x + step * v) - residual_fn(x - step * v)) / (2.0 * step)
    return float(np.max(np.abs(jv - fd))) / max(float(np.max(np.abs(jv))), 1e-300)


def _quadratic_rate(history: List[float]) -> Optional[float]:
    pairs = [
        (history[k], history[k + 1])
        for k in range(len(history) - 1)
        if history[k] > 0 and history[k + 1] > 0
    ]
    if not pairs:
        return None
    before, after = pairs[-1]
    return after / before**2


def newton(
    residual_fn: Callable[[np.ndarray], np.ndarray],
    jacobian_fn: Callable[[np.ndarray], object],
    x0: np.ndarray,
    cfg: SolverConfig,
    normalization: str = "none",
    f_size: int = 0,
    check_jacobian: bool = False,
    tol: Optional[float] = None,
) -> NewtonResult:
    """Damped Newton iteration on a flat vector of unknowns.

    With normalization="mean_zero_f" the first f_size entries of every update
    are projected to mean zero, so the mean of that block is preserved.
    """
    if normalization not in NORMALIZATIONS:
        raise ValueError(f"unknown normalization {normalization}")
    tol = cfg.newton_tol if tol is None else tol
    x = np.array(x0, dtype=float)
    r = residual_fn(x)
    norm = _sup(r)
    history = [norm]

    for iteration in range(cfg.max_newton):
        if norm <= tol:
            break
        jacobian = jacobian_fn(x)
        if check_jacobian and iteration == 0:
            gap = probe_jacobian(residual_fn, jacobian, x)
            if gap > PROBE_TOL:
                logger.error(f"Jacobian disagrees with finite differences: {gap:.2e}")
                raise JacobianMismatch(
                    f"Jacobian probe gap {gap:.2e} exceeds {PROBE_TOL:.0e}",
                    {"gap": gap},
                )
        delta = _solve_step(jacobian, -r, cfg)
        if normalization == "mean_zero_f" and f_size:
            delta[:f_size] -= np.mean(delta[:f_size])

        damping = cfg.damping
        while True:
            trial = x + damping * delta
            r_trial = residual_fn(trial)
            norm_trial = _sup(r_trial)
            if norm_trial < norm:
                break
            damping *= 0.5
            if damping < MIN_DAMPING:
                logger.debug(f"Newton line search failed at residual {norm:.3e}")
                raise NoConvergence(
                    f"residual stalled at {norm:.3e} after {iteration} iterations",
                    {"residual": norm, "iterations": iteration, "history": history},
                )
        x, r, norm = trial, r_trial, norm_trial
        history.append(norm)
        logger.debug(f"Newton iteration {iteration + 1}: residual {norm:.3e}")

    if norm > tol:
        raise NoConvergence(
            f"residual {norm:.3e} above {tol:.1e} after {cfg.max_newton} iterations",
            {"residual": norm, "iterations": cfg.max_newton, "history": history},
        )
    return NewtonResult(x, len(history) - 1, history, _quadratic_rate(history))
