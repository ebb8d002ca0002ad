"""
JSON records for matrices and the artifacts built from them.

Matrices are stored row-major together with their dimensions so that a
record can be read back without guessing shapes.
"""

from typing import Dict, List, Optional

import numpy as np
from pydantic import BaseModel


class MatrixRecord(BaseModel):
    rows: int
    cols: int
    data: List[float]

    @classmethod
    def of(cls, matrix) -> "MatrixRecord":
        arr = np.atleast_2d(np.asarray(matrix, dtype=float))
        return cls(rows=arr.shape[0], cols=arr.shape[1], data=arr.ravel(order="C").tolist())

    def to_array(self) -> np.ndarray:
        return np.asarray(self.data, dtype=float).reshape(self.rows, self.cols)


class VertexRecord(BaseModel):
    C: MatrixRecord
    D: MatrixRecord


class RegionRecord(BaseModel):
    q_radius: List[Optional[float]]
    v_radius: List[Optional[float]]
    u_radius: List[Optional[float]]


class VertexSetRecord(BaseModel):
    vertices: List[VertexRecord]
    region: RegionRecord
    channels: List[str] = []


class TubePolicyRecord(BaseModel):
    mode: str
    rho: Optional[float]  # None for an uncapped terminal set
    K_hat: MatrixRecord
    V_hat: MatrixRecord
    P: MatrixRecord
    K_seq: List[MatrixRecord]
    V_seq: List[MatrixRecord]
    certificate: Dict[str, float] = {}


class DiagnosticsRecord(BaseModel):
    energy: List[float] = []
    noether: Dict[str, List[float]] = {}
    max_residual: Optional[float] = None
    containment_slacks: List[float] = []
    extra: Dict[str, float] = {}


class TimingEntry(BaseModel):
    label: str
    n_rhocp: int
    per_iter_mean: float
    per_iter_sd: float
    total_mean: float
    total_sd: float
    repeats: int


class TimingRecord(BaseModel):
    entries: List[TimingEntry] = []


class SparseRecord(BaseModel):
    """Coordinate (COO) storage of a sparse matrix."""

    rows: int
    cols: int
    row: List[int]
    col: List[int]
    data: List[float]


class ConeDimsRecord(BaseModel):
    zero: int = 0
    nonneg: int = 0
    soc: List[int] = []
    psd: List[int] = []
    exp: int = 0


class StandardFormRecord(BaseModel):
    """min c'x + offset  s.t.  b - A x in K, with K the product of the listed cones in order."""

    kind: str
    n_variables: int
    c: List[float]
    offset: float = 0.0
    A: SparseRecord
    b: List[float]
    cones: ConeDimsRecord
    objective_value: Optional[float] = None


class ClosedLoopSummaryRecord(BaseModel):
    system: str
    steps: int
    n_rhocp: int
    control_dt: float
    micro_steps: int = 1
    mode: str
    maxiter: int
    total_solve_time: float
    mean_solve_time: float
    total_cost_realized: float
    initial_cost_bound: Optional[float] = None
    worst_containment_slack: Optional[float] = None
    max_constraint_violation: float = 0.0
    tube_fallbacks: int = 0


class RunSummaryRecord(BaseModel):
    name: str
    pipeline: str
    system: str
    output_dir: str
    artifacts: List[str] = []
    metrics: Dict[str, float] = {}
