"""
Multirate macro stepping.

A macro step of length p * dt carries the slow configuration q^s linearly
across the p micro intervals while the fast configuration q^f lives on
every micro node. With y = (q^s_i, q^s_{i+1}, q^{f,0}, ..., q^{f,p}) the
full configuration on micro node m is Q^m = Pi_m y and the discrete action
gradient is

    Gamma(y) = sum_m  Pi_m^T G1_m + Pi_{m+1}^T G2_m

with G1_m, G2_m the single-rate interval terms of micro interval m. The
macro equations are

    p^s_i + Gamma_{q^s_i} = 0          p^s_{i+1} = Gamma_{q^s_{i+1}}
    p^{f,0}_i + Gamma_{q^{f,0}} = 0    p^{f,0}_{i+1} = Gamma_{q^{f,p}}
    Gamma_{q^{f,m}} = 0                 for the interior nodes m = 1..p-1.
"""

from dataclasses import dataclass
from functools import cached_property
from typing import List, Sequence, Tuple
import logging

import numpy as np

from src.config import NEWTON_MAX_ITER, NEWTON_TOL
from src.errors import StepFailure, UsageError
from src.integrators.newton import solve_newton
from src.integrators.quadrature import QuadratureRule
from src.integrators.single_rate import interval_blocks, interval_terms, velocity_guess
from src.models.systems import MultiratePartition

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MacroState:
    q_s: np.ndarray
    q_f0: np.ndarray
    p_s: np.ndarray
    p_f0: np.ndarray

    def __post_init__(self):
        for name in ("q_s", "q_f0", "p_s", "p_f0"):
            object.__setattr__(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=float)).reshape(-1))

    @property
    def x(self) -> np.ndarray:
        return np.concatenate([self.q_s, self.q_f0, self.p_s, self.p_f0])

    @classmethod
    def from_vector(cls, x, partition: MultiratePartition) -> "MacroState":
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.shape[0] != partition.n_x:
            raise UsageError(f"macro state has length {x.shape[0]}, expected {partition.n_x}")
        s, f = partition.n_q_s, partition.n_q_f
        return cls(q_s=x[:s], q_f0=x[s : s + f], p_s=x[s + f : 2 * s + f], p_f0=x[2 * s + f :])

    def check(self, partition: MultiratePartition) -> None:
        if self.q_s.shape[0] != partition.n_q_s or self.q_f0.shape[0] != partition.n_q_f:
            raise UsageError("macro state does not match the partition dimensions")


@dataclass(frozen=True)
class MicroTrajectory:
    q_f: np.ndarray  # (p+1, n_f)
    p_f: np.ndarray  # (p+1, n_f)
    u_f: np.ndarray  # (p, n_uf)

    def __post_init__(self):
        if self.q_f.shape[0] != self.p_f.shape[0] or self.u_f.shape[0] != self.q_f.shape[0] - 1:
            raise UsageError("micro trajectory lengths must be p+1, p+1 and p")

    @property
    def micro_steps(self) -> int:
        return self.u_f.shape[0]


class MacroStack:
    """Index bookkeeping for y = (q^s_i, q^s_{i+1}, q^{f,0}, ..., q^{f,p})."""

    def __init__(self, partition: MultiratePartition):
        self.partition = partition
        self.p = partition.micro_steps
        self.n_s = partition.n_q_s
        self.n_f = partition.n_q_f
        self.n_y = 2 * self.n_s + (self.p + 1) * self.n_f

    @property
    def slow0(self) -> slice:
        return slice(0, self.n_s)

    @property
    def slow1(self) -> slice:
        return slice(self.n_s, 2 * self.n_s)

    def fast(self, m: int) -> slice:
        start = 2 * self.n_s + m * self.n_f
        return slice(start, start + self.n_f)

    @property
    def unknowns(self) -> np.ndarray:
        """Positions of (q^s_{i+1}, q^{f,1}, ..., q^{f,p}) inside y."""
        idx = list(range(self.n_s, 2 * self.n_s))
        idx += list(range(self.fast(1).start, self.n_y))
        return np.asarray(idx, dtype=int)

    @property
    def interior(self) -> np.ndarray:
        if self.p == 1:
            return np.zeros(0, dtype=int)
        return np.arange(self.fast(1).start, self.fast(self.p).start)

    def slow_weight(self, m: int) -> float:
        return (self.p - m) / self.p

    @cached_property
    def node_maps(self) -> List[np.ndarray]:
        S = self.partition.q_selector()
        maps = []
        for m in range(self.p + 1):
            Pi = np.zeros((self.n_s + self.n_f, self.n_y))
            a = self.slow_weight(m)
            Pi[: self.n_s, self.slow0] = a * np.eye(self.n_s)
            Pi[: self.n_s, self.slow1] = (1.0 - a) * np.eye(self.n_s)
            Pi[self.n_s :, self.fast(m)] = np.eye(self.n_f)
            maps.append(S @ Pi)
        return maps

    def assemble(self, q_s0, q_s1, q_f_nodes) -> np.ndarray:
        y = np.zeros(self.n_y)
        y[self.slow0] = q_s0
        y[self.slow1] = q_s1
        for m, qf in enumerate(q_f_nodes):
            y[self.fast(m)] = qf
        return y

    def node(self, y: np.ndarray, m: int) -> np.ndarray:
        return self.node_maps[m] @ y


@dataclass(frozen=True)
class MacroAction:
    gamma: np.ndarray
    jac_y: np.ndarray
    jac_u: np.ndarray
    G1: np.ndarray  # (p, n_q)
    G2: np.ndarray  # (p, n_q)
    blocks: tuple = ()


def macro_action(model, stack: MacroStack, rule: QuadratureRule, y, u_macro, strategy=None, jacobian: bool = True) -> MacroAction:
    """Gamma(y) and, when requested, its Jacobians with respect to y and the macro control.

    `model` is either one model for every micro interval or a sequence of p models.
    """
    models = list(model) if isinstance(model, (list, tuple)) else [model] * stack.p
    part = stack.partition
    y = np.asarray(y, dtype=float)
    gamma = np.zeros(stack.n_y)
    jac_y = np.zeros((stack.n_y, stack.n_y))
    jac_u = np.zeros((stack.n_y, part.n_u_macro))
    G1s, G2s, blocks = [], [], []

    for m in range(stack.p):
        Pa, Pb = stack.node_maps[m], stack.node_maps[m + 1]
        qa, qb = Pa @ y, Pb @ y
        u = part.micro_control(u_macro, m)
        G1, G2 = interval_terms(models[m], rule, qa, qb, u)
        gamma += Pa.T @ G1 + Pb.T @ G2
        G1s.append(G1)
        G2s.append(G2)
        if jacobian:
            blk = interval_blocks(models[m], rule, qa, qb, u, strategy)
            blocks.append(blk)
            jac_y += Pa.T @ (blk.G1a @ Pa + blk.G1b @ Pb) + Pb.T @ (blk.G2a @ Pa + blk.G2b @ Pb)
            U = part.micro_control_map(m)
            jac_u += (Pa.T @ blk.G1u + Pb.T @ blk.G2u) @ U

    return MacroAction(gamma=gamma, jac_y=jac_y, jac_u=jac_u, G1=np.asarray(G1s), G2=np.asarray(G2s), blocks=tuple(blocks))


def _fast_part(partition: MultiratePartition, covector: np.ndarray) -> np.ndarray:
    return covector[list(partition.fast_q)]


def micro_momenta(partition: MultiratePartition, action: MacroAction, p_f0: np.ndarray) -> np.ndarray:
    """p^{f,0} given, p^{f,m} = -G1_m^f for interior m, p^{f,p} = G2_{p-1}^f."""
    p = partition.micro_steps
    out = [np.asarray(p_f0, dtype=float)]
    for m in range(1, p):
        out.append(-_fast_part(partition, action.G1[m]))
    out.append(_fast_part(partition, action.G2[p - 1]))
    return np.asarray(out)


def macro_residual(stack: MacroStack, action: MacroAction, state: MacroState) -> np.ndarray:
    """Residual of the implicit macro equations at the current y."""
    return np.concatenate(
        [
            state.p_s + action.gamma[stack.slow0],
            state.p_f0 + action.gamma[stack.fast(0)],
            action.gamma[stack.interior],
        ]
    )


def step_multirate_macro(
    model,
    partition: MultiratePartition,
    rule: QuadratureRule,
    state: MacroState,
    u_macro,
    strategy=None,
    tol: float = NEWTON_TOL,
    max_iter: int = NEWTON_MAX_ITER,
) -> Tuple[MacroState, MicroTrajectory]:
    """Macro step with the stacked control (u^s, u^{f,0}, ..., u^{f,p-1})."""
    first = model[0] if isinstance(model, (list, tuple)) else model
    partition.check(first)
    state.check(partition)
    u_macro = np.asarray(u_macro, dtype=float).reshape(-1)
    if u_macro.shape[0] != partition.n_u_macro:
        raise UsageError(f"macro control has length {u_macro.shape[0]}, expected {partition.n_u_macro}")

    stack = MacroStack(partition)
    p = stack.p
    q0 = partition.join_q(state.q_s, state.q_f0)
    v0 = velocity_guess(first, q0, partition.join_q(state.p_s, state.p_f0))
    v_s, v_f = partition.split_q(v0)
    y0 = stack.assemble(
        state.q_s,
        state.q_s + p * rule.dt * v_s,
        [state.q_f0 + m * rule.dt * v_f for m in range(p + 1)],
    )
    unknowns = stack.unknowns
    rows = np.concatenate([np.arange(stack.slow0.start, stack.slow0.stop), np.arange(stack.fast(0).start, stack.fast(0).stop), stack.interior])

    def full(z):
        y = y0.copy()
        y[unknowns] = z
        return y

    def residual(z):
        return macro_residual(stack, macro_action(model, stack, rule, full(z), u_macro, jacobian=False), state)

    def jacobian(z):
        action = macro_action(model, stack, rule, full(z), u_macro, strategy)
        return action.jac_y[np.ix_(rows, unknowns)]

    z = solve_newton(residual, jacobian, y0[unknowns], tol=tol, max_iter=max_iter, what="multirate macro step")
    y = full(z)
    action = macro_action(model, stack, rule, y, u_macro, jacobian=False)

    nxt = MacroState(
        q_s=y[stack.slow1],
        q_f0=y[stack.fast(p)],
        p_s=action.gamma[stack.slow1],
        p_f0=action.gamma[stack.fast(p)],
    )
    micro = MicroTrajectory(
        q_f=np.asarray([y[stack.fast(m)] for m in range(p + 1)]),
        p_f=micro_momenta(partition, action, state.p_f0),
        u_f=np.asarray([partition.split_u(partition.micro_control(u_macro, m))[1] for m in range(p)]),
    )
    return nxt, micro


def step_multirate(
    model,
    partition: MultiratePartition,
    rule: QuadratureRule,
    state: MacroState,
    u_s_mid,
    u_f_seq: Sequence,
    strategy=None,
) -> Tuple[MacroState, MicroTrajectory]:
    if len(u_f_seq) != partition.micro_steps:
        raise UsageError(f"{len(u_f_seq)} fast controls supplied, expected {partition.micro_steps}")
    return step_multirate_macro(model, partition, rule, state, partition.macro_control(u_s_mid, u_f_seq), strategy)


def recover_micro_nodes(
    model,
    partition: MultiratePartition,
    rule: QuadratureRule,
    state_i: MacroState,
    state_next: MacroState,
    u_f_seq,
    u_s=None,
    tol: float = NEWTON_TOL,
) -> MicroTrajectory:
    """
    Rebuild the fast micro trajectory between two macro states from the fast
    inputs u^{f,0..p-1} and the slow input held over the macro step (zero if omitted).

    Marches the micro chain p^{f,m} + G1_m^f = 0, p^{f,m+1} = G2_m^f with the
    slow configuration interpolated between the two macro nodes, then checks
    that it lands on the fast entries of `state_next`.
    """
    stack = MacroStack(partition)
    p = stack.p
    fast = list(partition.fast_q)
    u_s = np.zeros(partition.n_u_s) if u_s is None else u_s
    u_macro = partition.macro_control(u_s, list(u_f_seq))

    def node(qf, m):
        a = stack.slow_weight(m)
        return partition.join_q(a * state_i.q_s + (1.0 - a) * state_next.q_s, qf)

    q_f = [state_i.q_f0]
    p_f = [state_i.p_f0]
    u_f = []
    for m in range(p):
        u = partition.micro_control(u_macro, m)
        u_f.append(partition.split_u(u)[1])
        qa = node(q_f[-1], m)
        pf = p_f[-1]
        guess = q_f[-1] + (q_f[-1] - q_f[-2]) if m > 0 else q_f[-1] + rule.dt * partition.split_q(velocity_guess(model, qa, partition.join_q(state_i.p_s, pf)))[1]

        def residual(qf_next, qa=qa, m=m, u=u, pf=pf):
            return pf + interval_terms(model, rule, qa, node(qf_next, m + 1), u)[0][fast]

        def jacobian(qf_next, qa=qa, m=m, u=u):
            blk = interval_blocks(model, rule, qa, node(qf_next, m + 1), u)
            return blk.G1b[np.ix_(fast, fast)]

        qf_next = solve_newton(residual, jacobian, guess, tol=tol, what=f"micro node {m + 1}")
        q_f.append(qf_next)
        p_f.append(interval_terms(model, rule, qa, node(qf_next, m + 1), u)[1][fast])

    mismatch = max(np.max(np.abs(q_f[-1] - state_next.q_f0)), np.max(np.abs(p_f[-1] - state_next.p_f0)))
    scale = 1.0 + max(np.max(np.abs(state_next.q_f0)), np.max(np.abs(state_next.p_f0)))
    if mismatch > 1e-8 * scale:
        raise StepFailure("no micro trajectory connects the two macro states", residual=float(mismatch), iterations=p)
    return MicroTrajectory(q_f=np.asarray(q_f), p_f=np.asarray(p_f), u_f=np.asarray(u_f))


def micro_configurations(partition: MultiratePartition, state_i: MacroState, state_next: MacroState, micro: MicroTrajectory) -> np.ndarray:
    """Full configurations on the micro nodes, slow part interpolated linearly."""
    p = partition.micro_steps
    rows = []
    for m in range(p + 1):
        a = (p - m) / p
        rows.append(partition.join_q(a * state_i.q_s + (1.0 - a) * state_next.q_s, micro.q_f[m]))
    return np.asarray(rows)
