"""
Single-rate forced discrete Euler-Lagrange stepping.

On an interval [q_i, q_{i+1}] with q_bar = b q_i + c q_{i+1} and
v = (q_{i+1} - q_i) / dt the discrete Lagrangian is L_d = dt L(q_bar, v)
and the discrete forces are f^- = f^+ = (dt/2) f(q_bar, v, u). The step
solves

    p_i + D1 L_d + f^- = 0,        p_{i+1} = D2 L_d + f^+

for q_{i+1}. G1 and G2 below denote D1 L_d + f^- and D2 L_d + f^+.

`model` may be a LagrangianSystem or any object with the same evaluation
methods (grad_q, grad_v, force, hessians, force_jacobians, lagrangian).
"""

from dataclasses import dataclass
from typing import Optional, Tuple
import logging

import numpy as np

from src.config import NEWTON_MAX_ITER, NEWTON_TOL
from src.errors import LinearizationError, StepFailure, UsageError
from src.integrators.newton import solve_newton
from src.integrators.quadrature import QuadratureRule
from src.linearize.derivatives import DEFAULT_STRATEGY, LocalDerivatives

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DiscreteState:
    q: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float).reshape(-1)
        p = np.asarray(self.p, dtype=float).reshape(-1)
        if q.shape != p.shape:
            raise UsageError(f"q and p lengths differ: {q.shape[0]} vs {p.shape[0]}")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(p))):
            raise UsageError("state entries must be finite")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "p", p)

    @property
    def x(self) -> np.ndarray:
        return np.concatenate([self.q, self.p])

    @classmethod
    def from_vector(cls, x, n_q: int) -> "DiscreteState":
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.shape[0] != 2 * n_q:
            raise UsageError(f"state vector has length {x.shape[0]}, expected {2 * n_q}")
        return cls(q=x[:n_q], p=x[n_q:])


@dataclass(frozen=True)
class IntervalBlocks:
    """Jacobians of (G1, G2) with respect to q_i (a), q_{i+1} (b) and u."""

    G1a: np.ndarray
    G1b: np.ndarray
    G2a: np.ndarray
    G2b: np.ndarray
    G1u: np.ndarray
    G2u: np.ndarray


def _check(model, q, what: str) -> np.ndarray:
    q = np.asarray(q, dtype=float).reshape(-1)
    if q.shape[0] != model.n_q:
        raise UsageError(f"{what} has length {q.shape[0]}, expected {model.n_q}")
    return q


def _control(model, u) -> np.ndarray:
    u = np.asarray(u, dtype=float).reshape(-1)
    if u.shape[0] != model.n_u:
        raise UsageError(f"control has length {u.shape[0]}, expected {model.n_u}")
    return u


def interval_terms(model, rule: QuadratureRule, q0, q1, u) -> Tuple[np.ndarray, np.ndarray]:
    q0 = _check(model, q0, "q_i")
    q1 = _check(model, q1, "q_{i+1}")
    u = _control(model, u)
    q_bar, v = rule.midpoint(q0, q1), rule.velocity(q0, q1)
    L_q = model.grad_q(q_bar, v)
    L_v = model.grad_v(q_bar, v)
    f = model.force(q_bar, v, u)
    half = 0.5 * rule.dt
    G1 = rule.dt * rule.b * L_q - L_v + half * f
    G2 = rule.dt * rule.c * L_q + L_v + half * f
    return G1, G2


def blocks_from_derivatives(d: LocalDerivatives, rule: QuadratureRule) -> IntervalBlocks:
    dt, b, c = rule.dt, rule.b, rule.c
    L_vq = d.L_qv.T

    Lq_a = b * d.L_qq - d.L_qv / dt
    Lq_b = c * d.L_qq + d.L_qv / dt
    Lv_a = b * L_vq - d.L_vv / dt
    Lv_b = c * L_vq + d.L_vv / dt
    f_a = b * d.f_q - d.f_v / dt
    f_b = c * d.f_q + d.f_v / dt
    half = 0.5 * dt

    return IntervalBlocks(
        G1a=dt * b * Lq_a - Lv_a + half * f_a,
        G1b=dt * b * Lq_b - Lv_b + half * f_b,
        G2a=dt * c * Lq_a + Lv_a + half * f_a,
        G2b=dt * c * Lq_b + Lv_b + half * f_b,
        G1u=half * d.f_u,
        G2u=half * d.f_u,
    )


def interval_blocks(model, rule: QuadratureRule, q0, q1, u, strategy=None) -> IntervalBlocks:
    strategy = strategy or DEFAULT_STRATEGY
    q0 = _check(model, q0, "q_i")
    q1 = _check(model, q1, "q_{i+1}")
    d = strategy.evaluate(model, rule.midpoint(q0, q1), rule.velocity(q0, q1), _control(model, u))
    return blocks_from_derivatives(d, rule)


def discrete_lagrangian_and_forces(model, rule: QuadratureRule, q0, q1, u) -> Tuple[float, np.ndarray, np.ndarray]:
    q0 = _check(model, q0, "q_i")
    q1 = _check(model, q1, "q_{i+1}")
    q_bar, v = rule.midpoint(q0, q1), rule.velocity(q0, q1)
    L_d = rule.dt * model.lagrangian(q_bar, v)
    f = 0.5 * rule.dt * model.force(q_bar, v, _control(model, u))
    return L_d, f, f.copy()


def step_residual(model, rule: QuadratureRule, state0: DiscreteState, state1: DiscreteState, u) -> np.ndarray:
    """Residual g(x_{i+1}, x_i, u_i) = (p_i + G1, p_{i+1} - G2)."""
    G1, G2 = interval_terms(model, rule, state0.q, state1.q, u)
    return np.concatenate([state0.p + G1, state1.p - G2])


def velocity_guess(model, q, p) -> np.ndarray:
    """First Newton iterate of the inverse Legendre map, linearized at zero velocity."""
    zero = np.zeros(model.n_q)
    try:
        return np.linalg.solve(model.hessians(q, zero)[2], np.asarray(p) - model.grad_v(q, zero))
    except np.linalg.LinAlgError:
        return zero


def inverse_legendre(model, q, p, tol: float = NEWTON_TOL) -> np.ndarray:
    """Velocity v with dL/dv(q, v) = p."""
    q = _check(model, q, "q")
    p = np.asarray(p, dtype=float)
    try:
        return solve_newton(
            lambda v: model.grad_v(q, v) - p,
            lambda v: model.hessians(q, v)[2],
            velocity_guess(model, q, p),
            tol=tol,
            what="inverse Legendre transform",
        )
    except StepFailure as e:
        raise LinearizationError(f"singular mass block: {e}") from e


def step_single_rate(
    model,
    rule: QuadratureRule,
    state: DiscreteState,
    u,
    strategy=None,
    tol: float = NEWTON_TOL,
    max_iter: int = NEWTON_MAX_ITER,
) -> DiscreteState:
    q0 = _check(model, state.q, "q")
    p0 = state.p
    u = _control(model, u)

    def residual(q1):
        return p0 + interval_terms(model, rule, q0, q1, u)[0]

    def jacobian(q1):
        return interval_blocks(model, rule, q0, q1, u, strategy).G1b

    guess = q0 + rule.dt * velocity_guess(model, q0, p0)
    q1 = solve_newton(residual, jacobian, guess, tol=tol, max_iter=max_iter, what="single-rate step")
    p1 = interval_terms(model, rule, q0, q1, u)[1]
    return DiscreteState(q=q1, p=p1)
