from dataclasses import dataclass
from typing import Optional
import logging

import numpy as np

from src.config import SOCP_TOL
from src.conic.backend import CvxpyBackend
from src.models.systems import Region, RegulationProblem
from src.rhocp.delta import DeltaDynamics, build_delta_dynamics
from src.rhocp.seed import SeedTrajectory, certify
from src.rhocp.socp import RhocpSolution, assemble_socp, solve_rhocp
from src.tubes.ellipsoid import ContainmentReport, check_containment
from src.tubes.policy import TubePolicy

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class IterationResult:
    solution: RhocpSolution
    delta: DeltaDynamics
    seed: SeedTrajectory
    new_seed: SeedTrajectory
    containment: ContainmentReport
    n_socp: int = 1


def tube_rollout(plant, seed: SeedTrajectory, delta: DeltaDynamics, solution: RhocpSolution) -> SeedTrajectory:
    """Nonlinear rollout under u_i = u^a_i + K_i (x_i - x^a_i) + nu_i from the seed's first state."""
    states = [seed.x_a[0]]
    controls = []
    for i in range(seed.horizon):
        u = seed.u_a[i] + delta.K_seq[i] @ (states[-1] - seed.x_a[i]) + solution.nu_seq[i]
        controls.append(u)
        states.append(plant.step(states[-1], u))
    return certify(plant, np.asarray(states), np.asarray(controls))


def solve_rhocp_iteration(
    plant,
    seed: SeedTrajectory,
    problem: RegulationProblem,
    policy: TubePolicy,
    region: Optional[Region] = None,
    terminal_slack: bool = False,
    tol: float = SOCP_TOL,
    backend: Optional[CvxpyBackend] = None,
) -> IterationResult:
    """
    One successive-linearization iteration: linearize along the seed, solve
    the SOCP, and re-simulate under the tube law to get the next seed.

    An infeasible SOCP raises InfeasibleProblem; the caller still holds the
    old seed.
    """
    delta = build_delta_dynamics(plant, seed, policy, region, problem)
    socp = assemble_socp(
        delta,
        seed,
        problem,
        policy,
        equilibrium=plant.equilibrium(),
        micro_rows=plant.micro_rows,
        terminal_slack=terminal_slack,
    )
    solution = solve_rhocp(socp, tol, backend)
    new_seed = tube_rollout(plant, seed, delta, solution)

    errors = new_seed.x_a - seed.x_a - solution.z_seq
    shapes = list(delta.V_seq) + [policy.V_hat]
    containment = check_containment(errors, shapes, solution.beta_seq)
    if not containment.passed:
        logger.warning("realized error left its tube (worst slack %.3e)", containment.worst_slack)
    logger.debug("rhocp iteration: cost bound %.6g, solve %.3fs", solution.cost_bound, solution.solve_time)
    return IterationResult(solution=solution, delta=delta, seed=seed, new_seed=new_seed, containment=containment)
