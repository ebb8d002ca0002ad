from dataclasses import dataclass
from typing import List, Optional, Tuple
import logging

import numpy as np

from src.errors import LinearizationError
from src.linearize.models import DisturbanceVertexSet
from src.models.systems import Region, RegulationProblem
from src.rhocp.plants import LinearizedStep
from src.rhocp.seed import SeedTrajectory
from src.tubes.policy import TubePolicy
from src.tubes.synthesis import solve_tube_gains

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DeltaDynamics:
    """
    x^d_{i+1} = A_i x^d_i + B_i u^d_i + drift_i + w_i along the seed, split as
    z_{i+1} = Phi_i z_i + B_i nu_i + drift_i and eps_{i+1} = Phi_i eps_i + w_i,
    with z_0 = eps_0 = 0.
    """

    steps: Tuple[LinearizedStep, ...]
    K_seq: Tuple[np.ndarray, ...]
    V_seq: Tuple[np.ndarray, ...]
    fallbacks: Tuple[int, ...] = ()

    @property
    def horizon(self) -> int:
        return len(self.steps)

    @property
    def A_seq(self) -> List[np.ndarray]:
        return [s.model.A for s in self.steps]

    @property
    def B_seq(self) -> List[np.ndarray]:
        return [s.model.B for s in self.steps]

    @property
    def drift_seq(self) -> List[np.ndarray]:
        return [s.model.drift for s in self.steps]

    @property
    def Phi_seq(self) -> List[np.ndarray]:
        return [s.model.A + s.model.B @ K for s, K in zip(self.steps, self.K_seq)]

    @property
    def vertex_sets(self) -> List[DisturbanceVertexSet]:
        return [s.vertex_set for s in self.steps]

    def nominal(self, nu_seq) -> np.ndarray:
        """z_0..z_N under the feedforward sequence."""
        z = [np.zeros(self.steps[0].model.n_x)]
        for Phi, B, d, nu in zip(self.Phi_seq, self.B_seq, self.drift_seq, nu_seq):
            z.append(Phi @ z[-1] + B @ nu + d)
        return np.asarray(z)


def build_delta_dynamics(
    plant,
    seed: SeedTrajectory,
    policy: TubePolicy,
    region: Optional[Region],
    problem: Optional[RegulationProblem] = None,
) -> DeltaDynamics:
    steps = []
    for i in range(seed.horizon):
        try:
            steps.append(plant.linearize_step(seed.x_a[i], seed.u_a[i], seed.x_a[i + 1], region))
        except LinearizationError as e:
            raise LinearizationError(f"linearization along the seed failed: {e}", condition=e.condition, step=i) from e

    if policy.mode == "varying":
        F, G, h = (problem.F, problem.G, problem.h) if problem is not None else (None, None, None)
        K_seq, V_seq, fallbacks = solve_tube_gains(
            [(s.model.A, s.model.B) for s in steps],
            [s.vertex_set for s in steps],
            policy.V_hat,
            policy.K_hat,
            "varying",
            F,
            G,
            h,
        )
    else:
        K_seq, V_seq, fallbacks = [policy.K_hat] * len(steps), [policy.V_hat] * len(steps), []
    logger.debug("delta dynamics: %d steps, %d tube fallbacks", len(steps), len(fallbacks))
    return DeltaDynamics(steps=tuple(steps), K_seq=tuple(K_seq), V_seq=tuple(V_seq), fallbacks=tuple(fallbacks))
