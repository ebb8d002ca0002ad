"""
Forced Lagrangian systems, slow/fast partitions and regulation problems.

A system is stated symbolically (sympy) in the coordinates q, the velocities
qdot and the controls u. Values and exact derivatives are compiled once with
`sympy.lambdify` and evaluated with numpy arrays afterwards.
"""

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Dict, Optional, Sequence, Tuple
import logging

import numpy as np
import sympy as sp

from src.errors import UsageError

logger = logging.getLogger(__name__)


def _as_vector(value, size: int, what: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float).reshape(-1)
    if arr.shape[0] != size:
        raise UsageError(f"{what} has length {arr.shape[0]}, expected {size}")
    return arr


@dataclass(frozen=True)
class _Compiled:
    lagrangian: Callable
    grad_q: Callable
    grad_v: Callable
    hess_qq: Callable
    hess_qv: Callable
    hess_vv: Callable
    force: Callable
    force_q: Callable
    force_v: Callable
    force_u: Callable


@dataclass(frozen=True)
class LagrangianSystem:
    """Continuous forced mechanical system L(q, qdot), f(q, qdot, u)."""

    name: str
    q: Tuple[sp.Symbol, ...]
    qdot: Tuple[sp.Symbol, ...]
    u: Tuple[sp.Symbol, ...]
    lagrangian_expr: sp.Expr
    force_expr: Tuple[sp.Expr, ...]
    separable: bool = False
    equilibrium: Optional[Tuple[np.ndarray, np.ndarray, np.ndarray]] = None
    cyclic: Tuple[int, ...] = ()
    parameters: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if len(self.qdot) != len(self.q):
            raise UsageError("qdot symbols must match q symbols")
        if len(self.force_expr) != len(self.q):
            raise UsageError(f"force has {len(self.force_expr)} entries, expected {len(self.q)}")
        if self.equilibrium is None:
            eq = (np.zeros(self.n_q), np.zeros(self.n_q), np.zeros(self.n_u))
            object.__setattr__(self, "equilibrium", eq)
        else:
            q_eq, v_eq, u_eq = self.equilibrium
            eq = (
                _as_vector(q_eq, self.n_q, "equilibrium q"),
                _as_vector(v_eq, self.n_q, "equilibrium qdot"),
                _as_vector(u_eq, self.n_u, "equilibrium u"),
            )
            object.__setattr__(self, "equilibrium", eq)

    @property
    def n_q(self) -> int:
        return len(self.q)

    @property
    def n_u(self) -> int:
        return len(self.u)

    @property
    def n_x(self) -> int:
        return 2 * self.n_q

    @property
    def arguments(self) -> Tuple[sp.Symbol, ...]:
        return (*self.q, *self.qdot, *self.u)

    @cached_property
    def _compiled(self) -> _Compiled:
        args = self.arguments
        L = sp.sympify(self.lagrangian_expr)
        f = sp.Matrix(self.force_expr)
        q = sp.Matrix(self.q)
        v = sp.Matrix(self.qdot)
        u = sp.Matrix(self.u)
        grad_q = sp.Matrix([L]).jacobian(q).T
        grad_v = sp.Matrix([L]).jacobian(v).T

        def compile_(expr):
            return sp.lambdify(args, expr, modules="numpy")

        logger.debug("Compiling derivatives for system %s", self.name)
        return _Compiled(
            lagrangian=compile_(L),
            grad_q=compile_(grad_q),
            grad_v=compile_(grad_v),
            hess_qq=compile_(grad_q.jacobian(q)),
            hess_qv=compile_(grad_q.jacobian(v)),
            hess_vv=compile_(grad_v.jacobian(v)),
            force=compile_(f),
            force_q=compile_(f.jacobian(q)),
            force_v=compile_(f.jacobian(v)),
            force_u=compile_(f.jacobian(u)) if self.n_u else (lambda *a: np.zeros((self.n_q, 0))),
        )

    def _args(self, q, qdot, u=None):
        q = _as_vector(q, self.n_q, "q")
        qdot = _as_vector(qdot, self.n_q, "qdot")
        u = np.zeros(self.n_u) if u is None else _as_vector(u, self.n_u, "u")
        return (*q, *qdot, *u)

    def _mat(self, fn, rows: int, cols: int, q, qdot, u=None) -> np.ndarray:
        out = np.asarray(fn(*self._args(q, qdot, u)), dtype=float)
        return out.reshape(rows, cols)

    # -----------------------
    # Values
    # -----------------------
    def lagrangian(self, q, qdot) -> float:
        return float(self._compiled.lagrangian(*self._args(q, qdot)))

    def force(self, q, qdot, u) -> np.ndarray:
        return self._mat(self._compiled.force, self.n_q, 1, q, qdot, u).reshape(-1)

    # -----------------------
    # Exact derivatives
    # -----------------------
    def grad_q(self, q, qdot) -> np.ndarray:
        return self._mat(self._compiled.grad_q, self.n_q, 1, q, qdot).reshape(-1)

    def grad_v(self, q, qdot) -> np.ndarray:
        return self._mat(self._compiled.grad_v, self.n_q, 1, q, qdot).reshape(-1)

    def hessians(self, q, qdot) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Return (L_qq, L_qv, L_vv) with L_qv[i, j] = d2L / dq_i dqdot_j."""
        n = self.n_q
        c = self._compiled
        return (
            self._mat(c.hess_qq, n, n, q, qdot),
            self._mat(c.hess_qv, n, n, q, qdot),
            self._mat(c.hess_vv, n, n, q, qdot),
        )

    def force_jacobians(self, q, qdot, u) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        n = self.n_q
        c = self._compiled
        return (
            self._mat(c.force_q, n, n, q, qdot, u),
            self._mat(c.force_v, n, n, q, qdot, u),
            self._mat(c.force_u, n, self.n_u, q, qdot, u),
        )

    def mass_matrix(self, q, qdot) -> np.ndarray:
        return self.hessians(q, qdot)[2]


def eval_lagrangian(sys: LagrangianSystem, q, qdot) -> float:
    return sys.lagrangian(q, qdot)


def eval_force(sys: LagrangianSystem, q, qdot, u) -> np.ndarray:
    return sys.force(q, qdot, u)


@dataclass(frozen=True)
class MultiratePartition:
    """Index maps y(q) = (q^s, q^f), u = (u^s, u^f) and the micro step count."""

    slow_q: Tuple[int, ...]
    fast_q: Tuple[int, ...]
    slow_u: Tuple[int, ...]
    fast_u: Tuple[int, ...]
    micro_steps: int

    def __post_init__(self):
        if self.micro_steps < 1:
            raise UsageError("micro_steps must be >= 1")
        for what, a, b in (("q", self.slow_q, self.fast_q), ("u", self.slow_u, self.fast_u)):
            merged = sorted((*a, *b))
            if merged != list(range(len(merged))):
                raise UsageError(f"slow/fast {what} indices must partition 0..{len(merged) - 1}")

    @property
    def n_q(self) -> int:
        return len(self.slow_q) + len(self.fast_q)

    @property
    def n_u(self) -> int:
        return len(self.slow_u) + len(self.fast_u)

    @property
    def n_q_s(self) -> int:
        return len(self.slow_q)

    @property
    def n_q_f(self) -> int:
        return len(self.fast_q)

    @property
    def n_u_s(self) -> int:
        return len(self.slow_u)

    @property
    def n_u_f(self) -> int:
        return len(self.fast_u)

    @property
    def n_x(self) -> int:
        return 2 * self.n_q

    @property
    def n_u_macro(self) -> int:
        return self.n_u_s + self.micro_steps * self.n_u_f

    def check(self, sys: LagrangianSystem) -> None:
        if self.n_q != sys.n_q or self.n_u != sys.n_u:
            raise UsageError(f"partition dimensions ({self.n_q}, {self.n_u}) do not match system {sys.name}")

    def split_q(self, q) -> Tuple[np.ndarray, np.ndarray]:
        q = np.asarray(q, dtype=float)
        return q[list(self.slow_q)], q[list(self.fast_q)]

    def join_q(self, q_s, q_f) -> np.ndarray:
        q = np.empty(self.n_q)
        q[list(self.slow_q)] = q_s
        q[list(self.fast_q)] = q_f
        return q

    def join_u(self, u_s, u_f) -> np.ndarray:
        u = np.empty(self.n_u)
        u[list(self.slow_u)] = u_s
        u[list(self.fast_u)] = u_f
        return u

    def split_u(self, u) -> Tuple[np.ndarray, np.ndarray]:
        u = np.asarray(u, dtype=float)
        return u[list(self.slow_u)], u[list(self.fast_u)]

    def q_selector(self) -> np.ndarray:
        """Matrix S with q = S @ (q^s, q^f)."""
        S = np.zeros((self.n_q, self.n_q))
        for col, idx in enumerate((*self.slow_q, *self.fast_q)):
            S[idx, col] = 1.0
        return S

    def u_selector(self) -> np.ndarray:
        S = np.zeros((self.n_u, self.n_u))
        for col, idx in enumerate((*self.slow_u, *self.fast_u)):
            S[idx, col] = 1.0
        return S

    def micro_control(self, u_macro, m: int) -> np.ndarray:
        """Full control on micro interval m from (u^s, u^{f,0}, ..., u^{f,p-1})."""
        u_macro = np.asarray(u_macro, dtype=float).reshape(-1)
        if u_macro.shape[0] != self.n_u_macro:
            raise UsageError(f"macro control has length {u_macro.shape[0]}, expected {self.n_u_macro}")
        u_s = u_macro[: self.n_u_s]
        start = self.n_u_s + m * self.n_u_f
        return self.join_u(u_s, u_macro[start : start + self.n_u_f])

    def micro_control_map(self, m: int) -> np.ndarray:
        """Matrix U_m with u^m = U_m @ u_macro."""
        U = np.zeros((self.n_u, self.n_u_macro))
        for k, idx in enumerate(self.slow_u):
            U[idx, k] = 1.0
        start = self.n_u_s + m * self.n_u_f
        for k, idx in enumerate(self.fast_u):
            U[idx, start + k] = 1.0
        return U

    def macro_control(self, u_s, u_f_seq: Sequence) -> np.ndarray:
        u_f_seq = [np.asarray(uf, dtype=float).reshape(-1) for uf in u_f_seq]
        if len(u_f_seq) != self.micro_steps:
            raise UsageError(f"{len(u_f_seq)} micro controls supplied, expected {self.micro_steps}")
        return np.concatenate([np.asarray(u_s, dtype=float).reshape(-1), *u_f_seq])

    def join_state(self, q_s, q_f0, p_s, p_f0) -> np.ndarray:
        return np.concatenate([np.atleast_1d(q_s), np.atleast_1d(q_f0), np.atleast_1d(p_s), np.atleast_1d(p_f0)]).astype(float)

    def single_rate_state(self, x_macro) -> np.ndarray:
        """Map (q^s, q^{f,0}, p^s, p^{f,0}) to the single-rate (q, p)."""
        x_macro = np.asarray(x_macro, dtype=float)
        n = self.n_q
        S = self.q_selector()
        return np.concatenate([S @ x_macro[:n], S @ x_macro[n:]])

    def macro_state(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        n = self.n_q
        S = self.q_selector()
        return np.concatenate([S.T @ x[:n], S.T @ x[n:]])


@dataclass(frozen=True)
class Region:
    """Box of half-widths on deviations of (q, qdot, u); np.inf marks an unbounded axis."""

    q_radius: np.ndarray
    v_radius: np.ndarray
    u_radius: np.ndarray

    def scaled(self, factor: float) -> "Region":
        return Region(self.q_radius * factor, self.v_radius * factor, self.u_radius * factor)

    @property
    def radius(self) -> np.ndarray:
        return np.concatenate([self.q_radius, self.v_radius, self.u_radius])


@dataclass(frozen=True)
class RegulationProblem:
    """Quadratic cost and linear constraints F x + G u <= h over an N-step horizon."""

    Q: np.ndarray
    R: np.ndarray
    F: np.ndarray
    G: np.ndarray
    h: np.ndarray
    horizon: int
    rho: float
    dt: float
    x0: Optional[np.ndarray] = None
    terminal_region: Optional[Region] = None
    online_fraction: float = 1.0

    def __post_init__(self):
        if self.F.shape[0] != self.G.shape[0] or self.F.shape[0] != self.h.shape[0]:
            raise UsageError("F, G and h must have the same number of rows")
        if self.Q.shape[0] != self.F.shape[1] or self.R.shape[0] != self.G.shape[1]:
            raise UsageError("constraint columns must match the weight dimensions")
        if self.horizon < 1:
            raise UsageError("horizon must be >= 1")
        if not np.allclose(self.R, self.R.T) or np.linalg.eigvalsh(self.R).min() <= 0.0:
            raise UsageError("R must be symmetric positive definite")
        if not np.allclose(self.Q, self.Q.T) or np.linalg.eigvalsh(self.Q).min() < -1e-12:
            raise UsageError("Q must be symmetric positive semidefinite")

    @property
    def n_x(self) -> int:
        return self.Q.shape[0]

    @property
    def n_u(self) -> int:
        return self.R.shape[0]

    @property
    def n_c(self) -> int:
        return self.h.shape[0]

    def online_region(self) -> Optional[Region]:
        if self.terminal_region is None:
            return None
        return self.terminal_region.scaled(self.online_fraction)
