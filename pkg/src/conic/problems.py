"""
Conic problem containers.

Problems are modelled with cvxpy; a container keeps the named decision
variables next to the cvxpy problem so callers read results by name.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional

import cvxpy as cp
import numpy as np

from src.errors import UsageError


@dataclass
class ConicSolution:
    status: str
    value: float
    variables: Dict[str, np.ndarray]
    solver: str
    max_violation: float = 0.0
    solve_time: float = 0.0
    iterations: Optional[int] = None

    def __getitem__(self, name: str) -> np.ndarray:
        return self.variables[name]


@dataclass
class ConicProblem:
    variables: Dict[str, cp.Variable]
    objective: cp.Minimize
    constraints: List[cp.Constraint]
    name: str = "conic"
    families: Dict[str, List[int]] = field(default_factory=dict)

    kind = "conic"

    def __post_init__(self):
        if not isinstance(self.objective, (cp.Minimize, cp.Maximize)):
            raise UsageError("objective must be cp.Minimize or cp.Maximize")
        self._problem = cp.Problem(self.objective, self.constraints)
        if not self._problem.is_dcp():
            raise UsageError(f"{self.name}: problem is not a disciplined convex program")
        self.check_cones()

    @property
    def problem(self) -> cp.Problem:
        return self._problem

    def check_cones(self) -> None:
        pass

    def add_family(self, family: str, constraints: List[cp.Constraint]) -> None:
        """Remember which constraint indices belong to a named family (for infeasibility reports)."""
        start = len(self.constraints)
        self.constraints.extend(constraints)
        self.families.setdefault(family, []).extend(range(start, start + len(constraints)))
        self._problem = cp.Problem(self.objective, self.constraints)

    def family_of(self, index: int) -> Optional[str]:
        for family, idx in self.families.items():
            if index in idx:
                return family
        return None


class SocpProblem(ConicProblem):
    """Linear objective, zero / nonnegative / second-order cone constraints only."""

    kind = "socp"

    def check_cones(self) -> None:
        for c in self.constraints:
            if isinstance(c, (cp.constraints.PSD, cp.constraints.ExpCone)):
                raise UsageError(f"{self.name}: {type(c).__name__} constraint in an SOCP")


class SdpProblem(ConicProblem):
    """Semidefinite constraints allowed; `log_det` marks a log-det objective term."""

    kind = "sdp"

    def __init__(self, variables, objective, constraints, name: str = "sdp", families=None, log_det: bool = False):
        self.log_det = log_det
        super().__init__(variables=variables, objective=objective, constraints=list(constraints), name=name, families=dict(families or {}))

    def check_cones(self) -> None:
        for c in self.constraints:
            if isinstance(c, cp.constraints.PSD) and c.args[0].shape[0] != c.args[0].shape[1]:
                raise UsageError(f"{self.name}: PSD block {c.id} is not square")


def lmi(block) -> cp.Constraint:
    """block >= 0 on the symmetric part; callers build blocks that are symmetric by construction."""
    return cp.constraints.PSD(0.5 * (block + block.T))
