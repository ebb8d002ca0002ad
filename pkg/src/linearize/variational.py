"""
Quadratic-Lagrangian / linear-force approximation.

Around a = (q^a, qdot^a, u^a) the Lagrangian is replaced by its second-order
Taylor polynomial (including the mixed q/qdot term) and the force by its
first-order one. The discrete Euler-Lagrange equations of the surrogate
are exactly linear in (q_i, q_{i+1}, p_i, p_{i+1}, u_i), so the linear model
is read off without differentiating the discrete residual.
"""

from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from src.integrators.quadrature import QuadratureRule
from src.integrators.single_rate import DiscreteState, blocks_from_derivatives, interval_terms, step_residual
from src.linearize.derivatives import SymbolicDifferentiation
from src.linearize.models import ApproximationPoint, LinearModel


@dataclass(frozen=True)
class QuadraticSurrogate:
    """L~ and f~ of a system at one approximation point, with the same evaluation API."""

    point: ApproximationPoint
    L0: float
    L_q: np.ndarray
    L_v: np.ndarray
    L_qq: np.ndarray
    L_qv: np.ndarray
    L_vv: np.ndarray
    f0: np.ndarray
    f_q: np.ndarray
    f_v: np.ndarray
    f_u: np.ndarray
    name: str = "surrogate"

    @classmethod
    def at(cls, sys, point: ApproximationPoint, strategy=None) -> "QuadraticSurrogate":
        point.check(sys)
        d = (strategy or SymbolicDifferentiation()).evaluate(sys, point.q_a, point.qdot_a, point.u_a)
        return cls(
            point=point,
            L0=sys.lagrangian(point.q_a, point.qdot_a),
            L_q=d.L_q,
            L_v=d.L_v,
            L_qq=d.L_qq,
            L_qv=d.L_qv,
            L_vv=d.L_vv,
            f0=d.f,
            f_q=d.f_q,
            f_v=d.f_v,
            f_u=d.f_u,
            name=f"{getattr(sys, 'name', 'system')}~",
        )

    @property
    def n_q(self) -> int:
        return self.L_q.shape[0]

    @property
    def n_u(self) -> int:
        return self.f_u.shape[1]

    def _delta(self, q, v) -> Tuple[np.ndarray, np.ndarray]:
        return np.asarray(q, dtype=float) - self.point.q_a, np.asarray(v, dtype=float) - self.point.qdot_a

    def lagrangian(self, q, v) -> float:
        dq, dv = self._delta(q, v)
        return float(
            self.L0
            + self.L_q @ dq
            + self.L_v @ dv
            + 0.5 * dq @ self.L_qq @ dq
            + dq @ self.L_qv @ dv
            + 0.5 * dv @ self.L_vv @ dv
        )

    def grad_q(self, q, v) -> np.ndarray:
        dq, dv = self._delta(q, v)
        return self.L_q + self.L_qq @ dq + self.L_qv @ dv

    def grad_v(self, q, v) -> np.ndarray:
        dq, dv = self._delta(q, v)
        return self.L_v + self.L_qv.T @ dq + self.L_vv @ dv

    def hessians(self, q, v):
        return self.L_qq, self.L_qv, self.L_vv

    def force(self, q, v, u) -> np.ndarray:
        dq, dv = self._delta(q, v)
        du = np.asarray(u, dtype=float) - self.point.u_a
        return self.f0 + self.f_q @ dq + self.f_v @ dv + self.f_u @ du

    def force_jacobians(self, q, v, u):
        return self.f_q, self.f_v, self.f_u

    def mass_matrix(self, q, v) -> np.ndarray:
        return self.L_vv


def model_from_blocks(blocks, n_q: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(M, D, J) of g = (p_i + G1, p_{i+1} - G2) from interval blocks."""
    I, Z = np.eye(n_q), np.zeros((n_q, n_q))
    M = np.block([[blocks.G1b, Z], [-blocks.G2b, I]])
    D = np.block([[blocks.G1a, I], [-blocks.G2a, Z]])
    J = np.vstack([blocks.G1u, -blocks.G2u])
    return M, D, J


def anchor_states(model, rule: QuadratureRule, q_i, q_next, u) -> Tuple[np.ndarray, np.ndarray]:
    """States (q_i, p_i), (q_{i+1}, p_{i+1}) that satisfy the discrete dynamics of `model`."""
    G1, G2 = interval_terms(model, rule, q_i, q_next, u)
    return np.concatenate([q_i, -G1]), np.concatenate([q_next, G2])


def variational_linearize(sys, rule: QuadratureRule, point: ApproximationPoint, anchor=None, strategy=None) -> LinearModel:
    """
    Linear model of the surrogate's discrete dynamics.

    Without `anchor` the matched configurations of `point` are used. An
    explicit anchor is a tuple (x_i, x_next, u_i) of states and control; the
    surrogate residual there becomes the model offset.
    """
    surrogate = QuadraticSurrogate.at(sys, point, strategy)
    n_q = surrogate.n_q
    if anchor is None:
        q_i, q_next = point.anchor_configs(rule)
        x_i, x_next = anchor_states(sys, rule, q_i, q_next, point.u_a)
        u_i = point.u_a
    else:
        x_i, x_next, u_i = (np.asarray(a, dtype=float) for a in anchor)

    d = SymbolicDifferentiation().evaluate(surrogate, point.q_a, point.qdot_a, point.u_a)
    M, D, J = model_from_blocks(blocks_from_derivatives(d, rule), n_q)
    offset = step_residual(
        surrogate,
        rule,
        DiscreteState.from_vector(x_i, n_q),
        DiscreteState.from_vector(x_next, n_q),
        u_i,
    )
    return LinearModel(
        M=M,
        D=D,
        J=J,
        point=point,
        x_anchor=x_i,
        x_next_anchor=x_next,
        u_anchor=u_i,
        offset=offset,
        method="variational",
    )


def surrogates_along(sys, rule: QuadratureRule, q_seq: Sequence, u_seq: Sequence, strategy=None):
    """Per-step surrogates at the points built from consecutive seed configurations."""
    return [
        QuadraticSurrogate.at(sys, ApproximationPoint.from_configs(rule, q_seq[i], q_seq[i + 1], u_seq[i]), strategy)
        for i in range(len(u_seq))
    ]
