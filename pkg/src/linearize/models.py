"""Data types shared by the linearization routes and the error bounds."""

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from src.config import CONDITION_LIMIT
from src.errors import LinearizationError, UsageError
from src.integrators.quadrature import QuadratureRule
from src.models.systems import Region
from src.records import MatrixRecord, RegionRecord, VertexRecord, VertexSetRecord


@dataclass(frozen=True)
class ApproximationPoint:
    """The point a = (q^a, qdot^a, u^a) at which L and f are expanded."""

    q_a: np.ndarray
    qdot_a: np.ndarray
    u_a: np.ndarray

    def __post_init__(self):
        for name in ("q_a", "qdot_a", "u_a"):
            object.__setattr__(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=float)).reshape(-1))
        if self.q_a.shape != self.qdot_a.shape:
            raise UsageError("q_a and qdot_a lengths differ")

    @classmethod
    def from_configs(cls, rule: QuadratureRule, q_i, q_next, u) -> "ApproximationPoint":
        """Per-step point built from two anchor configurations."""
        return cls(rule.midpoint(q_i, q_next), rule.velocity(q_i, q_next), u)

    def anchor_configs(self, rule: QuadratureRule) -> Tuple[np.ndarray, np.ndarray]:
        """(q_i, q_{i+1}) whose midpoint and difference quotient reproduce (q^a, qdot^a)."""
        q_i = self.q_a - rule.c * rule.dt * self.qdot_a
        q_next = self.q_a + rule.b * rule.dt * self.qdot_a
        return q_i, q_next

    def check(self, model) -> None:
        if self.q_a.shape[0] != model.n_q or self.u_a.shape[0] != model.n_u:
            raise UsageError("approximation point does not match the system dimensions")

    def distance(self, other: "ApproximationPoint") -> float:
        return float(
            max(
                np.max(np.abs(self.q_a - other.q_a)),
                np.max(np.abs(self.qdot_a - other.qdot_a)),
                np.max(np.abs(self.u_a - other.u_a)) if self.u_a.size else 0.0,
            )
        )


@dataclass(frozen=True)
class LinearModel:
    """
    M dx_{k+1} + D dx_k + J du_k + offset + e = 0 around an anchor.

    dx and du are deviations from (x_anchor, u_anchor) and (x_next_anchor).
    The offset is the model residual at the anchor; it vanishes for Jacobian
    models and for matched variational anchors.
    """

    M: np.ndarray
    D: np.ndarray
    J: np.ndarray
    point: Optional[ApproximationPoint]
    x_anchor: np.ndarray
    x_next_anchor: np.ndarray
    u_anchor: np.ndarray
    offset: np.ndarray = None
    method: str = "jacobian"
    condition: float = field(default=float("nan"))

    def __post_init__(self):
        n_x = self.M.shape[0]
        if self.M.shape != (n_x, n_x) or self.D.shape != (n_x, n_x) or self.J.shape[0] != n_x:
            raise UsageError("M, D and J have inconsistent shapes")
        if self.offset is None:
            object.__setattr__(self, "offset", np.zeros(n_x))
        cond = float(np.linalg.cond(self.M))
        object.__setattr__(self, "condition", cond)
        if not np.isfinite(cond) or cond > CONDITION_LIMIT:
            raise LinearizationError("M is singular beyond the condition limit", condition=cond)

    @property
    def n_x(self) -> int:
        return self.M.shape[0]

    @property
    def n_u(self) -> int:
        return self.J.shape[1]

    @property
    def A(self) -> np.ndarray:
        return -np.linalg.solve(self.M, self.D)

    @property
    def B(self) -> np.ndarray:
        return -np.linalg.solve(self.M, self.J)

    @property
    def drift(self) -> np.ndarray:
        return -np.linalg.solve(self.M, self.offset)

    def predict(self, x, u) -> np.ndarray:
        """Next state of the linear model (without the error term)."""
        dx = np.asarray(x, dtype=float) - self.x_anchor
        du = np.asarray(u, dtype=float) - self.u_anchor
        return self.x_next_anchor + self.A @ dx + self.B @ du + self.drift

    def error(self, x, u, x_next) -> np.ndarray:
        """e such that the exact transition x -> x_next satisfies the model."""
        dx = np.asarray(x, dtype=float) - self.x_anchor
        dx_next = np.asarray(x_next, dtype=float) - self.x_next_anchor
        du = np.asarray(u, dtype=float) - self.u_anchor
        return -(self.M @ dx_next + self.D @ dx + self.J @ du + self.offset)


@dataclass(frozen=True)
class MicroMaps:
    """Linear maps dq^{f,m} = Yq[m] dx + Zq[m] du and dp^{f,m} = Yp[m] dx + Zp[m] du, m = 0..p."""

    Yq: List[np.ndarray]
    Zq: List[np.ndarray]
    Yp: List[np.ndarray]
    Zp: List[np.ndarray]

    @property
    def micro_steps(self) -> int:
        return len(self.Yq) - 1

    def interior(self) -> Tuple[List[np.ndarray], List[np.ndarray]]:
        return self.Yq[1:-1], self.Zq[1:-1]

    def predict(self, dx, du) -> Tuple[np.ndarray, np.ndarray]:
        dq = np.asarray([Y @ dx + Z @ du for Y, Z in zip(self.Yq, self.Zq)])
        dp = np.asarray([Y @ dx + Z @ du for Y, Z in zip(self.Yp, self.Zp)])
        return dq, dp


def _inf_to_none(values: np.ndarray) -> List[Optional[float]]:
    return [None if not np.isfinite(v) else float(v) for v in values]


def _none_to_inf(values: Sequence[Optional[float]]) -> np.ndarray:
    return np.asarray([np.inf if v is None else v for v in values], dtype=float)


def region_to_record(region: Region) -> RegionRecord:
    return RegionRecord(
        q_radius=_inf_to_none(region.q_radius),
        v_radius=_inf_to_none(region.v_radius),
        u_radius=_inf_to_none(region.u_radius),
    )


def region_from_record(record: RegionRecord) -> Region:
    return Region(_none_to_inf(record.q_radius), _none_to_inf(record.v_radius), _none_to_inf(record.u_radius))


@dataclass(frozen=True)
class DisturbanceVertexSet:
    """Polytope Co{C^j dx + D^j du} containing the linearization error on `region`."""

    vertices: Tuple[Tuple[np.ndarray, np.ndarray], ...]
    region: Region
    channels: Tuple[str, ...] = ()

    def __post_init__(self):
        if len(self.vertices) < 1:
            raise UsageError("a vertex set needs at least one vertex")
        shapes = {(C.shape, D.shape) for C, D in self.vertices}
        if len(shapes) != 1:
            raise UsageError("all vertices must share the same shapes")

    @classmethod
    def zero(cls, n_x: int, n_u: int, region: Region) -> "DisturbanceVertexSet":
        return cls(vertices=((np.zeros((n_x, n_x)), np.zeros((n_x, n_u))),), region=region)

    @property
    def n_j(self) -> int:
        return len(self.vertices)

    @property
    def n_x(self) -> int:
        return self.vertices[0][0].shape[0]

    @property
    def n_u(self) -> int:
        return self.vertices[0][1].shape[1]

    def is_zero(self, tol: float = 0.0) -> bool:
        return all(np.max(np.abs(C), initial=0.0) <= tol and np.max(np.abs(D), initial=0.0) <= tol for C, D in self.vertices)

    def images(self, dx, du) -> np.ndarray:
        """Rows C^j dx + D^j du, one per vertex."""
        return np.asarray([C @ dx + D @ du for C, D in self.vertices])

    def to_record(self) -> VertexSetRecord:
        return VertexSetRecord(
            vertices=[VertexRecord(C=MatrixRecord.of(C), D=MatrixRecord.of(D)) for C, D in self.vertices],
            region=region_to_record(self.region),
            channels=list(self.channels),
        )

    @classmethod
    def from_record(cls, record: VertexSetRecord) -> "DisturbanceVertexSet":
        return cls(
            vertices=tuple((v.C.to_array(), v.D.to_array()) for v in record.vertices),
            region=region_from_record(record.region),
            channels=tuple(record.channels),
        )
