from dataclasses import dataclass
from typing import Optional, Sequence
import logging

import numpy as np

from src.errors import StepFailure, UsageError
from src.models.systems import RegulationProblem

logger = logging.getLogger(__name__)

SEED_RESIDUAL_TOL = 1e-8


@dataclass(frozen=True)
class SeedTrajectory:
    """Dynamically consistent nonlinear trajectory the RHOCP is linearized about."""

    x_a: np.ndarray
    u_a: np.ndarray
    residuals: np.ndarray

    def __post_init__(self):
        if self.x_a.shape[0] != self.u_a.shape[0] + 1:
            raise UsageError(f"seed has {self.x_a.shape[0]} states for {self.u_a.shape[0]} controls")

    @property
    def horizon(self) -> int:
        return self.u_a.shape[0]

    @property
    def max_residual(self) -> float:
        return float(np.max(self.residuals, initial=0.0))


def seed_from_controls(plant, x0, controls: Sequence) -> SeedTrajectory:
    u_a = np.atleast_2d(np.asarray(controls, dtype=float))
    return certify(plant, plant.rollout(x0, u_a), u_a)


def certify(plant, x_a: np.ndarray, u_a: np.ndarray) -> SeedTrajectory:
    residuals = np.asarray([plant.residual(x_a[i], u_a[i], x_a[i + 1]) for i in range(u_a.shape[0])])
    seed = SeedTrajectory(x_a=x_a, u_a=u_a, residuals=residuals)
    if seed.max_residual > SEED_RESIDUAL_TOL * (1.0 + np.max(np.abs(x_a))):
        logger.warning("seed residual %.3e exceeds %.1e", seed.max_residual, SEED_RESIDUAL_TOL)
    return seed


def input_rows(problem: RegulationProblem):
    """Rows of F x + G u <= h that involve only the input."""
    keep = np.all(problem.F == 0.0, axis=1) & np.isfinite(problem.h)
    return problem.G[keep], problem.h[keep]


def saturate(u, u_eq, G_u: np.ndarray, h_u: np.ndarray) -> np.ndarray:
    """Largest step from u_eq towards u that keeps G_u u <= h_u."""
    u = np.asarray(u, dtype=float)
    du = u - u_eq
    if G_u.shape[0] == 0:
        return u
    slack = h_u - G_u @ u_eq
    rate = G_u @ du
    active = rate > slack
    if not np.any(active):
        return u
    s = float(np.min(np.clip(slack[active], 0.0, None) / rate[active]))
    return u_eq + s * du


def violation(problem: RegulationProblem, x_a: np.ndarray, u_a: np.ndarray) -> float:
    rows = np.isfinite(problem.h)
    F, G, h = problem.F[rows], problem.G[rows], problem.h[rows]
    if F.shape[0] == 0:
        return 0.0
    worst = np.max(x_a[:-1] @ F.T + u_a @ G.T - h)
    return float(max(worst, 0.0))


def feedback_rollout(plant, problem: RegulationProblem, x0, K_hat, steps: int, prefix: Optional[np.ndarray] = None) -> SeedTrajectory:
    """Roll out u = u_eq + K_hat (x - x_eq) saturated to the input rows, after an optional fixed prefix."""
    x_eq, u_eq = plant.equilibrium()
    G_u, h_u = input_rows(problem)
    prefix = [] if prefix is None else list(np.atleast_2d(prefix))
    states = [np.asarray(x0, dtype=float)]
    controls = []
    for i in range(steps):
        u = prefix[i] if i < len(prefix) else saturate(u_eq + K_hat @ (states[-1] - x_eq), u_eq, G_u, h_u)
        controls.append(u)
        states.append(plant.step(states[-1], u))
    return certify(plant, np.asarray(states), np.asarray(controls))


def initial_seed(plant, problem: RegulationProblem, x0, K_hat) -> SeedTrajectory:
    """
    Mode-2 law saturated to the input bounds; equilibrium control when that
    rollout fails or violates a constraint.
    """
    N = problem.horizon
    try:
        seed = feedback_rollout(plant, problem, x0, K_hat, N)
        if violation(problem, seed.x_a, seed.u_a) == 0.0:
            return seed
        logger.warning("saturated feedback seed violates constraints; falling back to equilibrium control")
    except StepFailure as e:
        logger.warning("feedback seed rollout failed (%s); falling back to equilibrium control", e)
    _, u_eq = plant.equilibrium()
    return seed_from_controls(plant, x0, np.tile(u_eq, (N, 1)))


def shift_seed(plant, problem: RegulationProblem, seed: SeedTrajectory, x_measured, K_hat) -> SeedTrajectory:
    """Drop the applied control, append the mode-2 law at the end and re-simulate from the measurement."""
    return feedback_rollout(plant, problem, x_measured, K_hat, seed.horizon, prefix=seed.u_a[1:])
