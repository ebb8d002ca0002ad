"""Damped Newton iteration shared by the implicit steppers."""

from typing import Callable
import logging

import numpy as np

from src.config import NEWTON_MAX_ITER, NEWTON_TOL
from src.errors import StepFailure

logger = logging.getLogger(__name__)


def solve_newton(
    residual: Callable[[np.ndarray], np.ndarray],
    jacobian: Callable[[np.ndarray], np.ndarray],
    x0: np.ndarray,
    tol: float = NEWTON_TOL,
    max_iter: int = NEWTON_MAX_ITER,
    what: str = "implicit step",
) -> np.ndarray:
    """
    Solve residual(x) = 0 from x0.

    The full Newton step is halved while the residual inf-norm does not
    decrease (at most 30 halvings). Raises StepFailure with the last
    residual norm when `max_iter` iterations are exhausted.
    """
    x = np.array(x0, dtype=float)
    r = residual(x)
    norm = float(np.max(np.abs(r))) if r.size else 0.0

    for it in range(max_iter):
        if norm <= tol:
            logger.debug("%s converged in %d iterations (residual %.3e)", what, it, norm)
            return x
        try:
            dx = np.linalg.solve(jacobian(x), -r)
        except np.linalg.LinAlgError as e:
            raise StepFailure(f"{what}: singular Newton matrix", residual=norm, iterations=it) from e

        step = 1.0
        for _ in range(30):
            x_try = x + step * dx
            r_try = residual(x_try)
            norm_try = float(np.max(np.abs(r_try)))
            if np.isfinite(norm_try) and norm_try < norm:
                break
            step *= 0.5
        else:
            # no decrease: take the smallest step and let the iteration count decide
            logger.debug("%s: line search stalled at residual %.3e", what, norm)
        x, r, norm = x_try, r_try, norm_try

    if norm <= tol:
        return x
    raise StepFailure(f"{what} did not converge in {max_iter} iterations", residual=norm, iterations=max_iter)
