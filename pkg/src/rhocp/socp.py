"""
Online RHOCP as a second-order cone program in the feedforward sequence nu
and the tube radii beta.

Along the seed (x^a, u^a) the deviations split into a nominal part z and an
error part eps in E(V_i, beta_i^2); the input is u = u^a + K_i (z + eps) + nu.
Each stage cost is bounded by the triangle inequality,

    ||Q^1/2 (x^a_i + z_i + eps_i)|| <= ||Q^1/2 (x^a_i + z_i)|| + beta_i sigma(Q^1/2 V_i^-1/2),

and the objective is the sum of squares of these bounds, so its optimal
value is a certified upper bound of the worst-case cost over the tube.
"""

from dataclasses import dataclass
from typing import Dict, List, Optional
import logging

import cvxpy as cp
import numpy as np

from src.config import SOCP_TOL, TERMINAL_SLACK_PENALTY
from src.conic.backend import CvxpyBackend, solve_socp
from src.conic.problems import SocpProblem
from src.errors import UsageError
from src.models.systems import RegulationProblem
from src.rhocp.delta import DeltaDynamics
from src.rhocp.seed import SeedTrajectory
from src.tubes.ellipsoid import Ellipsoid, ellipsoid_support, psd_sqrt
from src.tubes.policy import TubePolicy

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RhocpSolution:
    nu_seq: np.ndarray
    beta_seq: np.ndarray
    z_seq: np.ndarray
    cost_bound: float
    status: str
    iterations: Optional[int] = None
    solve_time: float = 0.0
    terminal_slack: float = 0.0

    def controls(self, delta: DeltaDynamics, seed: SeedTrajectory) -> np.ndarray:
        """u^a_i + K_i z_i + nu_i."""
        return np.asarray([seed.u_a[i] + delta.K_seq[i] @ self.z_seq[i] + self.nu_seq[i] for i in range(seed.horizon)])


def _row_supports(ell: Ellipsoid, rows: np.ndarray) -> np.ndarray:
    return np.asarray([ellipsoid_support(ell, r) for r in rows])


def _check_dimensions(delta: DeltaDynamics, seed: SeedTrajectory, problem: RegulationProblem, policy: TubePolicy) -> None:
    n_x, n_u = seed.x_a.shape[1], seed.u_a.shape[1]
    if delta.horizon != seed.horizon:
        raise UsageError(f"delta dynamics cover {delta.horizon} steps, the seed {seed.horizon}")
    if (problem.n_x, problem.n_u) != (n_x, n_u):
        raise UsageError(f"problem is ({problem.n_x}, {problem.n_u}), seed is ({n_x}, {n_u})")
    if (policy.n_x, policy.n_u) != (n_x, n_u):
        raise UsageError(f"tube policy is ({policy.n_x}, {policy.n_u}), seed is ({n_x}, {n_u})")


def assemble_socp(
    delta: DeltaDynamics,
    seed: SeedTrajectory,
    problem: RegulationProblem,
    policy: TubePolicy,
    equilibrium=None,
    micro_rows=None,
    terminal_slack: bool = False,
) -> SocpProblem:
    """
    Families: dynamics, cost, constraints, containment, terminal, trust-region
    and micro-nodes (multirate plants with configuration rows only).
    """
    _check_dimensions(delta, seed, problem, policy)
    N = seed.horizon
    n_x, n_u = seed.x_a.shape[1], seed.u_a.shape[1]
    if equilibrium is None:
        x_eq, u_eq = np.zeros(n_x), np.zeros(n_u)
    else:
        x_eq, u_eq = (np.asarray(a, dtype=float) for a in equilibrium)

    nu = cp.Variable((N, n_u), name="nu")
    z = cp.Variable((N + 1, n_x), name="z")
    beta = cp.Variable(N + 1, name="beta")
    t_x = cp.Variable(N + 1, name="t_x")
    t_u = cp.Variable(N, name="t_u")
    cost = cp.Variable(name="cost")
    variables: Dict[str, cp.Variable] = {"nu": nu, "z": z, "beta": beta, "cost": cost}

    tubes = [Ellipsoid(V) for V in delta.V_seq] + [Ellipsoid(policy.V_hat)]
    sqQ, sqR, sqP = psd_sqrt(problem.Q), psd_sqrt(problem.R), psd_sqrt(policy.P)
    rows = np.isfinite(problem.h)
    F, G, h = problem.F[rows], problem.G[rows], problem.h[rows]

    fam: Dict[str, List[cp.Constraint]] = {k: [] for k in ("dynamics", "cost", "constraints", "containment", "terminal", "trust-region", "micro-nodes")}

    fam["dynamics"] += [z[0] == 0, beta[0] == 0, beta >= 0]
    for i, (Phi, B, d) in enumerate(zip(delta.Phi_seq, delta.B_seq, delta.drift_seq)):
        fam["dynamics"].append(z[i + 1] == Phi @ z[i] + B @ nu[i] + d)

    for i in range(N):
        K = delta.K_seq[i]
        ell, nxt = tubes[i], tubes[i + 1]
        x_i = seed.x_a[i] + z[i]
        u_i = seed.u_a[i] + K @ z[i] + nu[i]

        fam["cost"].append(cp.norm(sqQ @ (x_i - x_eq)) + beta[i] * ellipsoid_support(ell, sqQ) <= t_x[i])
        fam["cost"].append(cp.norm(sqR @ (u_i - u_eq)) + beta[i] * ellipsoid_support(ell, sqR @ K) <= t_u[i])

        if F.shape[0]:
            fam["constraints"].append(F @ x_i + G @ u_i + beta[i] * _row_supports(ell, F + G @ K) <= h)

        Phi = delta.Phi_seq[i]
        vset = delta.vertex_sets[i]
        if vset.is_zero():
            fam["containment"].append(beta[i] * np.linalg.norm(nxt.sqrt @ Phi @ ell.inv_sqrt, 2) <= beta[i + 1])
        else:
            for C, D in vset.vertices:
                H = C + D @ K
                gain = np.linalg.norm(nxt.sqrt @ (Phi + H) @ ell.inv_sqrt, 2)
                fam["containment"].append(cp.norm(nxt.sqrt @ (H @ z[i] + D @ nu[i])) + beta[i] * gain <= beta[i + 1])

            trust = delta.steps[i].trust
            if trust is not None and trust.radius.size:
                T = trust.Tx + trust.Tu @ K
                xi = T @ z[i] + trust.Tu @ nu[i]
                spread = beta[i] * _row_supports(ell, T)
                fam["trust-region"] += [xi + spread <= trust.radius, -xi + spread <= trust.radius]

        if micro_rows is not None:
            E, h_q = micro_rows
            for node in delta.steps[i].micro_nodes:
                L = node.Lx + node.Lu @ K
                q_node = node.q_anchor + L @ z[i] + node.Lu @ nu[i]
                fam["micro-nodes"].append(E @ q_node + beta[i] * _row_supports(ell, E @ L) <= h_q)

    x_N = seed.x_a[N] + z[N]
    fam["cost"].append(cp.norm(sqP @ (x_N - x_eq)) + beta[N] * ellipsoid_support(tubes[N], sqP) <= t_x[N])
    # the last cross-section is V_hat itself, so its support in E(V_hat, 1) is beta_N
    reach = cp.norm(tubes[N].sqrt @ (x_N - x_eq)) + beta[N]

    objective = cost
    if terminal_slack:
        slack = cp.Variable(nonneg=True, name="terminal_slack")
        variables["terminal_slack"] = slack
        fam["terminal"].append(reach <= 1 + slack)
        objective = cost + TERMINAL_SLACK_PENALTY * slack
    else:
        fam["terminal"].append(reach <= 1)

    # cost >= ||(t_x, t_u)||^2 as a rotated cone
    t = cp.hstack([t_x, t_u])
    fam["cost"].append(cp.SOC(cost + 1, cp.hstack([2 * t, cp.reshape(cost - 1, (1,))])))

    socp = SocpProblem(variables=variables, objective=cp.Minimize(objective), constraints=[], name="rhocp")
    for family, constraints in fam.items():
        if constraints:
            socp.add_family(family, constraints)
    return socp


def solve_rhocp(socp: SocpProblem, tol: float = SOCP_TOL, backend: Optional[CvxpyBackend] = None) -> RhocpSolution:
    sol = solve_socp(socp, tol, backend)
    return RhocpSolution(
        nu_seq=np.atleast_2d(sol["nu"]),
        beta_seq=np.clip(sol["beta"], 0.0, None),
        z_seq=np.atleast_2d(sol["z"]),
        cost_bound=float(sol["cost"]),
        status="optimal",
        iterations=sol.iterations,
        solve_time=sol.solve_time,
        terminal_slack=float(sol["terminal_slack"]) if "terminal_slack" in sol.variables else 0.0,
    )


def nominal_cost(delta: DeltaDynamics, seed: SeedTrajectory, problem: RegulationProblem, policy: TubePolicy, solution: RhocpSolution, equilibrium=None) -> float:
    """Exact quadratic cost of the nominal prediction (x^a + z, u^a + K z + nu) under (Q, R, P)."""
    n_x, n_u = seed.x_a.shape[1], seed.u_a.shape[1]
    x_eq, u_eq = (np.zeros(n_x), np.zeros(n_u)) if equilibrium is None else equilibrium
    x = seed.x_a + solution.z_seq - x_eq
    u = solution.controls(delta, seed) - u_eq
    stage = np.einsum("ij,jk,ik->", x[:-1], problem.Q, x[:-1]) + np.einsum("ij,jk,ik->", u, problem.R, u)
    return float(stage + x[-1] @ policy.P @ x[-1])
