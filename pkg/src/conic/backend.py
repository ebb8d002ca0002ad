"""
Solver backend for conic problems.

The primary solver is tried first; an inaccurate or failed solve is retried
with the secondary one. Every accepted solution is re-checked by evaluating
the constraint violations directly, independent of the solver's own report.
"""

from dataclasses import dataclass
from typing import Optional
import logging
import time

import cvxpy as cp
import numpy as np

from src.config import PRIMARY_SOLVER, SDP_TOL, SECONDARY_SOLVER, SOCP_MAX_ITER, SOCP_TOL
from src.conic.problems import ConicProblem, ConicSolution, SdpProblem, SocpProblem
from src.errors import InfeasibleProblem, SolverLimit, VerificationError

logger = logging.getLogger(__name__)

INFEASIBLE = {cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE}
UNBOUNDED = {cp.UNBOUNDED, cp.UNBOUNDED_INACCURATE}
VERIFY_FLOOR = 1e-9


def solver_options(solver: str, tol: float, max_iter: int) -> dict:
    if solver == "CLARABEL":
        return {"tol_gap_abs": tol, "tol_gap_rel": tol, "tol_feas": tol, "max_iter": max_iter}
    if solver == "SCS":
        # first-order method: tolerance floor and a larger iteration cap
        return {"eps_abs": max(tol, 1e-9), "eps_rel": max(tol, 1e-9), "max_iters": 50 * max_iter}
    return {}


def max_violation(problem: ConicProblem) -> float:
    worst = 0.0
    for c in problem.constraints:
        try:
            v = c.violation()
        except (NotImplementedError, ValueError, TypeError):
            logger.debug("no direct violation check for %s", type(c).__name__)
            continue
        if v is None:
            continue
        worst = max(worst, float(np.max(np.atleast_1d(v))))
    return worst


def _binding_family(problem: ConicProblem) -> Optional[str]:
    """Family with the largest dual when infeasibility is certified, if the solver reports duals."""
    best, family = 0.0, None
    for k, c in enumerate(problem.constraints):
        dual = c.dual_value
        if dual is None:
            continue
        size = float(np.max(np.abs(np.atleast_1d(np.asarray(dual, dtype=float)))))
        if size > best:
            best, family = size, problem.family_of(k)
    return family


@dataclass
class CvxpyBackend:
    primary: str = PRIMARY_SOLVER
    secondary: Optional[str] = SECONDARY_SOLVER
    max_iter: int = SOCP_MAX_ITER

    def solvers(self):
        installed = set(cp.installed_solvers())
        chain = [s for s in (self.primary, self.secondary) if s and s in installed]
        if not chain:
            raise SolverLimit(f"none of the configured solvers {self.primary}, {self.secondary} is installed")
        return chain

    def _run(self, problem: ConicProblem, solver: str, tol: float) -> str:
        prob = problem.problem
        try:
            prob.solve(solver=solver, verbose=False, **solver_options(solver, tol, self.max_iter))
        except cp.error.SolverError as e:
            logger.warning("%s failed on %s: %s", solver, problem.name, e)
            return "solver_error"
        return prob.status

    def solve(self, problem: ConicProblem, tol: float) -> ConicSolution:
        verify_tol = max(10.0 * tol, VERIFY_FLOOR)
        last = None
        for solver in self.solvers():
            start = time.perf_counter()
            status = self._run(problem, solver, tol)
            elapsed = time.perf_counter() - start
            last = status
            logger.debug("%s on %s: %s in %.3f s", solver, problem.name, status, elapsed)

            if status in INFEASIBLE:
                family = _binding_family(problem)
                raise InfeasibleProblem(f"{problem.name} is infeasible ({solver}: {status})", family=family)
            if status in UNBOUNDED:
                raise SolverLimit(f"{problem.name} is unbounded ({solver}: {status})")
            if status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
                continue

            viol = max_violation(problem)
            scale = 1.0 + max((np.max(np.abs(v.value), initial=0.0) for v in problem.variables.values() if v.value is not None), default=0.0)
            if viol > verify_tol * scale:
                if status == cp.OPTIMAL:
                    logger.warning("%s returned %s on %s but violates constraints by %.3e", solver, status, problem.name, viol)
                continue
            if status == cp.OPTIMAL_INACCURATE:
                logger.warning("%s reported an inaccurate optimum on %s (violation %.3e)", solver, problem.name, viol)
            stats = problem.problem.solver_stats
            return ConicSolution(
                status=status,
                value=float(problem.problem.value),
                variables={k: np.asarray(v.value, dtype=float) for k, v in problem.variables.items()},
                solver=solver,
                max_violation=viol,
                solve_time=elapsed,
                iterations=getattr(stats, "num_iters", None),
            )

        if last in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
            raise VerificationError(f"{problem.name}: no solver produced a solution passing the direct constraint check")
        raise SolverLimit(f"{problem.name}: solver limit reached (last status {last})")


DEFAULT_BACKEND = CvxpyBackend()


def solve_socp(problem: SocpProblem, tol: float = SOCP_TOL, backend: Optional[CvxpyBackend] = None) -> ConicSolution:
    return (backend or DEFAULT_BACKEND).solve(problem, tol)


def solve_sdp(problem: SdpProblem, tol: float = SDP_TOL, backend: Optional[CvxpyBackend] = None) -> ConicSolution:
    return (backend or DEFAULT_BACKEND).solve(problem, tol)
