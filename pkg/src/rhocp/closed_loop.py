"""
Dual-mode closed loop: at every control step the RHOCP is solved along a
shifted seed and the first control u^a_0 + nu_0 is applied to the nonlinear
plant. A multirate plant runs the same loop on the macro grid.
"""

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Optional
import logging
import time

import numpy as np

from src.config import RHOCP_MAXITER, SOCP_TOL, WARMUP_MAX_ITER
from src.conic.backend import CvxpyBackend
from src.errors import InfeasibleProblem, RecursiveFeasibilityError, UsageError
from src.integrators.simulate import write_csv
from src.models.systems import RegulationProblem
from src.records import ClosedLoopSummaryRecord
from src.rhocp.iteration import IterationResult, solve_rhocp_iteration
from src.rhocp.seed import initial_seed, shift_seed, violation
from src.tubes.policy import MODES, TubePolicy
from src.tubes.synthesis import synthesize_terminal

logger = logging.getLogger(__name__)

SLACK_TOL = 1e-9


def offline_policy(plant, problem: RegulationProblem, mode: str = "constant") -> TubePolicy:
    """Terminal weight and set from the origin linearization with vertex sets on the mode-2 region."""
    if mode not in MODES:
        raise UsageError(f"unknown tube mode {mode!r}")
    origin = plant.origin_step(problem.terminal_region)
    policy = synthesize_terminal(
        origin.model.A,
        origin.model.B,
        origin.vertex_set,
        problem.Q,
        problem.R,
        problem.F,
        problem.G,
        problem.h,
        problem.rho,
        problem.horizon,
    )
    logger.info("offline policy: %d vertices, certificate %s", origin.vertex_set.n_j, policy.certificate)
    return policy if mode == "constant" else replace(policy, mode="varying")


@dataclass
class ClosedLoopRecord:
    system: str
    control_dt: float
    micro_steps: int
    mode: str
    maxiter: int
    states: List[np.ndarray] = field(default_factory=list)
    controls: List[np.ndarray] = field(default_factory=list)
    cost_bounds: List[float] = field(default_factory=list)
    solve_times: List[float] = field(default_factory=list)
    n_iter: List[int] = field(default_factory=list)
    containment_slacks: List[float] = field(default_factory=list)
    tube_fallbacks: int = 0

    @property
    def n_rhocp(self) -> int:
        return len(self.controls)

    @property
    def x(self) -> np.ndarray:
        return np.asarray(self.states)

    @property
    def u(self) -> np.ndarray:
        return np.asarray(self.controls)

    def realized_cost(self, problem: RegulationProblem, equilibrium) -> float:
        x_eq, u_eq = equilibrium
        x = self.x[:-1] - x_eq
        u = self.u - u_eq
        return float(np.einsum("ij,jk,ik->", x, problem.Q, x) + np.einsum("ij,jk,ik->", u, problem.R, u))

    def table(self) -> np.ndarray:
        """One row per applied control: t, x_k, u_k, cost_bound, solve_ms, n_iter."""
        k = np.arange(self.n_rhocp)
        return np.column_stack(
            [
                k * self.control_dt,
                self.x[:-1],
                self.u,
                self.cost_bounds,
                1e3 * np.asarray(self.solve_times),
                self.n_iter,
            ]
        )

    def header(self) -> List[str]:
        n_x, n_u = self.x.shape[1], self.u.shape[1]
        return ["t", *[f"x{i}" for i in range(n_x)], *[f"u{j}" for j in range(n_u)], "cost_bound", "solve_ms", "n_iter"]

    def summary(self, problem: RegulationProblem, equilibrium) -> ClosedLoopSummaryRecord:
        return ClosedLoopSummaryRecord(
            system=self.system,
            steps=self.n_rhocp,
            n_rhocp=self.n_rhocp,
            control_dt=self.control_dt,
            micro_steps=self.micro_steps,
            mode=self.mode,
            maxiter=self.maxiter,
            total_solve_time=float(np.sum(self.solve_times)),
            mean_solve_time=float(np.mean(self.solve_times)) if self.solve_times else 0.0,
            total_cost_realized=self.realized_cost(problem, equilibrium),
            initial_cost_bound=self.cost_bounds[0] if self.cost_bounds else None,
            worst_containment_slack=min(self.containment_slacks) if self.containment_slacks else None,
            max_constraint_violation=violation(problem, self.x, self.u),
            tube_fallbacks=self.tube_fallbacks,
        )

    def save(self, out_dir, problem: RegulationProblem, equilibrium) -> Path:
        out_dir = Path(out_dir)
        write_csv(out_dir / "closed_loop.csv", self.header(), self.table())
        (out_dir / "closed_loop.json").write_text(self.summary(problem, equilibrium).model_dump_json(indent=2))
        logger.info("closed loop (%d steps) written to %s", self.n_rhocp, out_dir)
        return out_dir


def _warm_up(plant, seed, problem, policy, region, tol, backend) -> IterationResult:
    """
    First-step feasibility: relaxed RHOCPs with a penalized terminal slack are
    iterated until the slack vanishes, then the exact problem is solved.
    """
    try:
        return solve_rhocp_iteration(plant, seed, problem, policy, region, tol=tol, backend=backend)
    except InfeasibleProblem as e:
        logger.info("initial RHOCP infeasible (%s); warming up with a terminal slack", e)

    n_socp = 1
    for it in range(WARMUP_MAX_ITER):
        relaxed = solve_rhocp_iteration(plant, seed, problem, policy, region, terminal_slack=True, tol=tol, backend=backend)
        n_socp += relaxed.n_socp
        seed = relaxed.new_seed
        logger.debug("warm-up %d: terminal slack %.3e", it, relaxed.solution.terminal_slack)
        if relaxed.solution.terminal_slack <= SLACK_TOL:
            break
    result = solve_rhocp_iteration(plant, seed, problem, policy, region, tol=tol, backend=backend)
    return replace(result, n_socp=n_socp + result.n_socp)


def mpc_closed_loop(
    plant,
    problem: RegulationProblem,
    policy: TubePolicy,
    x0,
    steps: int,
    maxiter: int = RHOCP_MAXITER,
    region=None,
    tol: float = SOCP_TOL,
    backend: Optional[CvxpyBackend] = None,
) -> ClosedLoopRecord:
    """
    Region defaults to the problem's online trust region. Infeasibility after a
    feasible first step raises RecursiveFeasibilityError.
    """
    if maxiter < 1 or steps < 1:
        raise UsageError("steps and maxiter must be >= 1")
    region = problem.online_region() if region is None else region
    x = np.asarray(x0, dtype=float)
    record = ClosedLoopRecord(
        system=plant.sys.name,
        control_dt=plant.control_dt,
        micro_steps=plant.micro_steps,
        mode=policy.mode,
        maxiter=maxiter,
        states=[x],
    )

    seed = initial_seed(plant, problem, x, policy.K_hat)
    for k in range(steps):
        start = time.perf_counter()
        try:
            if k == 0:
                result = _warm_up(plant, seed, problem, policy, region, tol, backend)
                seed = result.new_seed
                n_socp = result.n_socp
                remaining = maxiter - 1
            else:
                n_socp = 0
                remaining = maxiter
            for _ in range(remaining):
                result = solve_rhocp_iteration(plant, seed, problem, policy, region, tol=tol, backend=backend)
                seed = result.new_seed
                n_socp += result.n_socp
        except InfeasibleProblem as e:
            if k == 0:
                raise
            raise RecursiveFeasibilityError(k) from e
        elapsed = time.perf_counter() - start

        # x^d_0 = 0, so the applied control is u^a_0 + nu_0
        u = result.seed.u_a[0] + result.solution.nu_seq[0]
        x = plant.step(x, u)

        record.states.append(x)
        record.controls.append(u)
        record.cost_bounds.append(result.solution.cost_bound)
        record.solve_times.append(elapsed)
        record.n_iter.append(n_socp)
        record.containment_slacks.append(result.containment.worst_slack)
        record.tube_fallbacks += len(result.delta.fallbacks)
        logger.info("step %d: cost bound %.6g, %.1f ms", k, result.solution.cost_bound, 1e3 * elapsed)

        if k + 1 < steps:
            seed = shift_seed(plant, problem, seed, x, policy.K_hat)
    return record


def control_steps(t_target: float, dt: float, micro_steps: int) -> int:
    """Number of macro steps to reach t_target; t_target must be a whole number of macro steps."""
    n = t_target / (micro_steps * dt)
    if abs(n - round(n)) > 1e-9 * max(1.0, n) or round(n) < 1:
        raise UsageError(f"t_target={t_target} is not a positive multiple of the macro step {micro_steps * dt}")
    return int(round(n))


def multirate_mpc_closed_loop(
    plant,
    problem: RegulationProblem,
    policy: TubePolicy,
    x0,
    t_target: float,
    maxiter: int = RHOCP_MAXITER,
    region=None,
    tol: float = SOCP_TOL,
    backend: Optional[CvxpyBackend] = None,
) -> ClosedLoopRecord:
    """Closed loop on the macro grid; x0 is the macro state (q^s, q^f0, p^s, p^f0)."""
    steps = control_steps(t_target, plant.rule.dt, plant.micro_steps)
    logger.info("multirate closed loop: p=%d, %d RHOCPs to t=%.4g", plant.micro_steps, steps, t_target)
    return mpc_closed_loop(plant, problem, policy, x0, steps, maxiter, region, tol, backend)
