"""
Benchmark instances: the planar quadcopter and the two-mass Fermi-Pasta-Ulam chain.

Small textbook systems (free particle, harmonic oscillator, pendulum) are
provided as well; they serve as closed-form references in the test-suite.
"""

from typing import Tuple
import math

import numpy as np
import sympy as sp

from src.config import GRAVITY
from src.models.systems import LagrangianSystem, MultiratePartition, Region, RegulationProblem

FPU_ETA = 50.0


def _symbols(names, suffix=""):
    return tuple(sp.Symbol(f"{n}{suffix}", real=True) for n in names)


def _abs_rows(M: np.ndarray) -> np.ndarray:
    """Stack M and -M so that |M x| <= h becomes two one-sided blocks."""
    return np.vstack([M, -M])


def make_quadcopter(g: float = GRAVITY) -> Tuple[LagrangianSystem, RegulationProblem]:
    q = _symbols(("y", "z", "alpha"))
    v = _symbols(("y", "z", "alpha"), "dot")
    u = _symbols(("u1", "u2"))
    y, z, alpha = q
    u1, u2 = u

    L = sp.Rational(1, 2) * sum(vi**2 for vi in v) - g * z
    f = ((u1 + g) * sp.sin(alpha), (u1 + g) * sp.cos(alpha), u2)

    sys = LagrangianSystem(
        name="quadcopter",
        q=q,
        qdot=v,
        u=u,
        lagrangian_expr=L,
        force_expr=f,
        separable=True,
        cyclic=(0, 2),
        parameters={"g": g},
    )

    n_x, n_u = 6, 2
    F = np.zeros((4, n_x))
    G = _abs_rows(np.eye(n_u))
    h = np.full(4, 10.0)
    terminal = Region(
        q_radius=np.array([np.inf, np.inf, 0.3]),
        v_radius=np.array([np.inf, np.inf, 1.0]),
        u_radius=np.array([2.5, 5.0]),
    )
    problem = RegulationProblem(
        Q=np.diag([0.1, 0.1, 10.0, 1.0, 1.0, 1.0]),
        R=np.diag([1e-4, 1e-3]),
        F=F,
        G=G,
        h=h,
        horizon=21,
        rho=10.0,
        dt=0.05,
        x0=np.array([0.0, -1.0, -1.0, 0.0, 0.0, 0.0]),
        terminal_region=terminal,
        online_fraction=0.15,
    )
    return sys, problem


def make_fpu(micro_steps: int = 1, dt: float = 0.01, eta: float = FPU_ETA, horizon: int = 10) -> Tuple[LagrangianSystem, MultiratePartition, RegulationProblem]:
    """FPU chain with q = (q^s, q^f): centre of the stiff spring and its length."""
    q = _symbols(("qs", "qf"))
    v = _symbols(("qs", "qf"), "dot")
    u = _symbols(("us", "uf"))
    qs, qf = q

    L = (v[0] ** 2 + v[1] ** 2 - (eta * qf) ** 2) / 2 - ((qs + qf) ** 4 + (qs - qf) ** 4) / 4
    sys = LagrangianSystem(
        name="fpu",
        q=q,
        qdot=v,
        u=u,
        lagrangian_expr=L,
        force_expr=u,
        separable=True,
        parameters={"eta": eta},
    )
    partition = MultiratePartition(slow_q=(0,), fast_q=(1,), slow_u=(0,), fast_u=(1,), micro_steps=micro_steps)

    p = micro_steps
    macro_dt = p * dt
    E = np.array([[1.0, -1.0], [1.0, 1.0]]) / math.sqrt(2.0)
    n_u = 1 + p

    # rows: E q, E p, then E (u^s, u^{f,m}) for each micro interval
    F_blocks, G_blocks, h_blocks = [], [], []
    for offset in (0, 2):
        F = np.zeros((2, 4))
        F[:, offset : offset + 2] = E
        F_blocks.append(_abs_rows(F))
        G_blocks.append(np.zeros((4, n_u)))
        h_blocks.append(np.full(4, 10.0))
    for m in range(p):
        Gm = np.zeros((2, n_u))
        Gm[:, 0] = E[:, 0]
        Gm[:, 1 + m] = E[:, 1]
        F_blocks.append(np.zeros((4, 4)))
        G_blocks.append(_abs_rows(Gm))
        h_blocks.append(np.full(4, 20.0))

    box = 0.8 * math.sqrt(2.0)
    terminal = Region(
        q_radius=np.array([box, box]),
        v_radius=np.array([np.inf, np.inf]),
        u_radius=np.array([np.inf, np.inf]),
    )
    problem = RegulationProblem(
        Q=macro_dt * np.eye(4),
        R=np.diag([macro_dt, *([dt] * p)]),
        F=np.vstack(F_blocks),
        G=np.vstack(G_blocks),
        h=np.concatenate(h_blocks),
        horizon=horizon,
        rho=1000.0,
        dt=dt,
        x0=np.array([1.0, 1.0 / eta, 1.0, 1.0]),
        terminal_region=terminal,
        online_fraction=0.05,
    )
    return sys, partition, problem


def fpu_state_constraint_rows() -> Tuple[np.ndarray, np.ndarray]:
    """Rows (E_q, h_q) of the configuration constraint E q <= 10 in both signs."""
    E = np.array([[1.0, -1.0], [1.0, 1.0]]) / math.sqrt(2.0)
    return _abs_rows(E), np.full(4, 10.0)


def make_free_particle(n_u: int = 1) -> LagrangianSystem:
    q = _symbols(("x",))
    v = _symbols(("x",), "dot")
    u = _symbols(tuple(f"u{k}" for k in range(n_u)))
    return LagrangianSystem(
        name="free_particle",
        q=q,
        qdot=v,
        u=u,
        lagrangian_expr=v[0] ** 2 / 2,
        force_expr=(sum(u, sp.Integer(0)),),
        separable=True,
        cyclic=(0,),
    )


def make_harmonic_oscillator(omega: float = 1.0) -> LagrangianSystem:
    q = _symbols(("x",))
    v = _symbols(("x",), "dot")
    u = _symbols(("u",))
    return LagrangianSystem(
        name="harmonic_oscillator",
        q=q,
        qdot=v,
        u=u,
        lagrangian_expr=v[0] ** 2 / 2 - omega**2 * q[0] ** 2 / 2,
        force_expr=u,
        separable=True,
        parameters={"omega": omega},
    )


def make_pendulum(g: float = GRAVITY) -> LagrangianSystem:
    q = _symbols(("theta",))
    v = _symbols(("theta",), "dot")
    u = _symbols(("u",))
    return LagrangianSystem(
        name="pendulum",
        q=q,
        qdot=v,
        u=u,
        lagrangian_expr=v[0] ** 2 / 2 + g * sp.cos(q[0]),
        force_expr=u,
        separable=True,
        parameters={"g": g},
    )


BENCHMARKS = {
    "quadcopter": make_quadcopter,
    "fpu": make_fpu,
}

SYSTEMS = {
    "quadcopter": lambda: make_quadcopter()[0],
    "fpu": lambda: make_fpu()[0],
    "free_particle": make_free_particle,
    "harmonic_oscillator": make_harmonic_oscillator,
    "pendulum": make_pendulum,
}
