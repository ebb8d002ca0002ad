"""
JSON standard form of a conic problem, for dump and replay.

    minimize    c'x + offset
    subject to  b - A x  in  K = {0}^zero x R+^nonneg x SOC(soc[0]) x ... x PSD(psd[0]) x ... x EXP^exp

The slice of b - A x belonging to a PSD block of order k holds its lower
triangle column by column with off-diagonal entries scaled by sqrt(2); an
exponential cone block is a triple (x, y, z) with y exp(x / y) <= z. This is
the layout cvxpy produces for SCS, so any problem built in this package can
be exported and solved again from the JSON alone.
"""

from pathlib import Path
from typing import Optional
import logging

import cvxpy as cp
import numpy as np
import scipy.sparse as sps

from src.conic.backend import CvxpyBackend, DEFAULT_BACKEND
from src.conic.problems import ConicProblem, ConicSolution, SdpProblem, SocpProblem, lmi
from src.errors import UsageError
from src.records import ConeDimsRecord, SparseRecord, StandardFormRecord

logger = logging.getLogger(__name__)


def to_standard_form(problem: ConicProblem, objective_value: Optional[float] = None) -> StandardFormRecord:
    if isinstance(problem.objective, cp.Maximize):
        raise UsageError("standard form export expects a minimization problem")
    data, _, inverse_data = problem.problem.get_problem_data(cp.SCS)
    dims = data[cp.settings.DIMS]
    A = sps.coo_matrix(data[cp.settings.A])
    solver_data = inverse_data[-1] if inverse_data else {}
    offset = float(solver_data.get(cp.settings.OFFSET, 0.0)) if isinstance(solver_data, dict) else 0.0
    return StandardFormRecord(
        kind=problem.kind,
        n_variables=int(A.shape[1]),
        c=np.asarray(data[cp.settings.C], dtype=float).tolist(),
        offset=offset,
        A=SparseRecord(rows=int(A.shape[0]), cols=int(A.shape[1]), row=A.row.tolist(), col=A.col.tolist(), data=A.data.tolist()),
        b=np.asarray(data[cp.settings.B], dtype=float).tolist(),
        cones=ConeDimsRecord(
            zero=int(dims.zero),
            nonneg=int(dims.nonneg),
            soc=[int(k) for k in dims.soc],
            psd=[int(k) for k in dims.psd],
            exp=int(dims.exp),
        ),
        objective_value=objective_value,
    )


def _svec_to_matrix(k: int) -> np.ndarray:
    """T with vec(S) = T s (column-major) for the scaled lower-triangle vector s of a symmetric S."""
    T = np.zeros((k * k, k * (k + 1) // 2))
    idx = 0
    for j in range(k):
        for i in range(j, k):
            if i == j:
                T[j * k + i, idx] = 1.0
            else:
                T[j * k + i, idx] = T[i * k + j, idx] = 1.0 / np.sqrt(2.0)
            idx += 1
    return T


def from_standard_form(record: StandardFormRecord) -> ConicProblem:
    n = record.n_variables
    A = sps.csc_matrix((record.A.data, (record.A.row, record.A.col)), shape=(record.A.rows, record.A.cols))
    b = np.asarray(record.b, dtype=float)
    c = np.asarray(record.c, dtype=float)
    x = cp.Variable(n)
    s = b - A @ x

    cones = record.cones
    constraints = []
    r = 0
    if cones.zero:
        constraints.append(s[r : r + cones.zero] == 0)
        r += cones.zero
    if cones.nonneg:
        constraints.append(s[r : r + cones.nonneg] >= 0)
        r += cones.nonneg
    for k in cones.soc:
        constraints.append(cp.SOC(s[r], s[r + 1 : r + k]))
        r += k
    for k in cones.psd:
        m = k * (k + 1) // 2
        S = cp.reshape(_svec_to_matrix(k) @ s[r : r + m], (k, k), order="F")
        constraints.append(lmi(S))
        r += m
    for _ in range(cones.exp):
        constraints.append(cp.constraints.ExpCone(s[r], s[r + 1], s[r + 2]))
        r += 3
    if r != A.shape[0]:
        raise UsageError(f"cone dimensions cover {r} rows, the constraint matrix has {A.shape[0]}")

    objective = cp.Minimize(c @ x + record.offset)
    if record.kind == "socp":
        return SocpProblem(variables={"x": x}, objective=objective, constraints=constraints, name="replay")
    return SdpProblem(variables={"x": x}, objective=objective, constraints=constraints, name="replay")


def dump_problem(problem: ConicProblem, path, objective_value: Optional[float] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(to_standard_form(problem, objective_value).model_dump_json(indent=2))
    logger.info("wrote %s standard form (%d variables) to %s", problem.kind, problem.problem.size_metrics.num_scalar_variables, path)
    return path


def load_problem(path) -> StandardFormRecord:
    return StandardFormRecord.model_validate_json(Path(path).read_text())


def replay(record: StandardFormRecord, tol: float = 1e-8, backend: Optional[CvxpyBackend] = None) -> ConicSolution:
    return (backend or DEFAULT_BACKEND).solve(from_standard_form(record), tol)
