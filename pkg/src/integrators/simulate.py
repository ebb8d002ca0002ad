"""
Trajectory generation: variational, multirate, successively linearized and
forward-Euler reference runs, with CSV export.

A step failure ends the run early; the partial trajectory is returned with
`failure` set instead of raising, so that diagnostics can still be written.
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence
import logging

import numpy as np

from src.errors import StepFailure, UsageError
from src.integrators.multirate import MacroState, MicroTrajectory, micro_configurations, step_multirate_macro
from src.integrators.quadrature import QuadratureRule
from src.integrators.single_rate import DiscreteState, inverse_legendre, step_single_rate
from src.linearize.models import ApproximationPoint
from src.linearize.variational import QuadraticSurrogate
from src.models.systems import MultiratePartition

logger = logging.getLogger(__name__)


def _control_rows(controls, steps: int, n_u: int) -> np.ndarray:
    controls = np.asarray(controls, dtype=float).reshape(-1, n_u) if n_u else np.zeros((steps, 0))
    if controls.shape[0] != steps:
        raise UsageError(f"{controls.shape[0]} controls supplied for {steps} steps")
    return controls


@dataclass
class Trajectory:
    """States x_0..x_K on a uniform grid, controls and midpoint forces of the K completed steps."""

    dt: float
    n_q: int
    states: List[np.ndarray]
    controls: List[np.ndarray] = field(default_factory=list)
    forces: List[np.ndarray] = field(default_factory=list)
    failure: Optional[str] = None

    @property
    def steps(self) -> int:
        return len(self.states) - 1

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(len(self.states))

    @property
    def x(self) -> np.ndarray:
        return np.asarray(self.states)

    @property
    def q(self) -> np.ndarray:
        return self.x[:, : self.n_q]

    @property
    def p(self) -> np.ndarray:
        return self.x[:, self.n_q :]

    def table(self) -> np.ndarray:
        """Rows (t, q, p, u); the final row carries NaN controls."""
        n_u = self.controls[0].shape[0] if self.controls else 0
        u = np.full((len(self.states), n_u), np.nan)
        if self.controls:
            u[: self.steps] = np.asarray(self.controls)
        return np.column_stack([self.times, self.x, u])

    def header(self) -> List[str]:
        n_u = self.controls[0].shape[0] if self.controls else 0
        return ["t", *[f"q{k}" for k in range(self.n_q)], *[f"p{k}" for k in range(self.n_q)], *[f"u{k}" for k in range(n_u)]]

    def to_csv(self, path) -> Path:
        return write_csv(path, self.header(), self.table())


@dataclass
class MultirateTrajectory:
    """Macro states (q^s, q^{f,0}, p^s, p^{f,0}) and the micro trajectory of every macro step."""

    partition: MultiratePartition
    dt: float
    states: List[MacroState]
    controls: List[np.ndarray] = field(default_factory=list)
    micro: List[MicroTrajectory] = field(default_factory=list)
    failure: Optional[str] = None

    @property
    def steps(self) -> int:
        return len(self.states) - 1

    @property
    def macro_dt(self) -> float:
        return self.partition.micro_steps * self.dt

    @property
    def x(self) -> np.ndarray:
        return np.asarray([s.x for s in self.states])

    def single_rate_states(self) -> np.ndarray:
        return np.asarray([self.partition.single_rate_state(s.x) for s in self.states])

    def table(self) -> np.ndarray:
        """One row per micro node (t, q, p, u) with q, p in the system's coordinate order.

        Slow momenta are only defined on macro nodes and are repeated on the
        interior micro nodes.
        """
        part = self.partition
        p = part.micro_steps
        rows = []
        for i, (s0, s1, micro) in enumerate(zip(self.states[:-1], self.states[1:], self.micro)):
            q_nodes = micro_configurations(part, s0, s1, micro)
            u_macro = self.controls[i]
            for m in range(p):
                mom = part.join_q(s0.p_s, micro.p_f[m])
                rows.append([(i * p + m) * self.dt, *q_nodes[m], *mom, *part.micro_control(u_macro, m)])
        last = self.states[-1]
        rows.append(
            [
                self.steps * self.macro_dt,
                *part.join_q(last.q_s, last.q_f0),
                *part.join_q(last.p_s, last.p_f0),
                *np.full(part.n_u, np.nan),
            ]
        )
        return np.asarray(rows, dtype=float)

    def to_csv(self, path) -> Path:
        n = self.partition.n_q
        header = ["t", *[f"q{k}" for k in range(n)], *[f"p{k}" for k in range(n)], *[f"u{k}" for k in range(self.partition.n_u)]]
        return write_csv(path, header, self.table())


def write_csv(path, header: Sequence[str], rows: np.ndarray) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, np.atleast_2d(rows), delimiter=",", header=",".join(header), comments="", fmt="%.17g")
    return path


def _midpoint_force(model, rule: QuadratureRule, q0, q1, u) -> np.ndarray:
    return model.force(rule.midpoint(q0, q1), rule.velocity(q0, q1), u)


def simulate(model, rule: QuadratureRule, x0, controls, steps: int, strategy=None) -> Trajectory:
    n = model.n_q
    controls = _control_rows(controls, steps, model.n_u)
    state = DiscreteState.from_vector(x0, n)
    traj = Trajectory(dt=rule.dt, n_q=n, states=[state.x])
    for i in range(steps):
        try:
            nxt = step_single_rate(model, rule, state, controls[i], strategy)
        except StepFailure as e:
            traj.failure = f"step {i}: {e}"
            logger.warning("simulation of %s stopped at step %d: %s", getattr(model, "name", "model"), i, e)
            break
        traj.controls.append(controls[i].copy())
        traj.forces.append(_midpoint_force(model, rule, state.q, nxt.q, controls[i]))
        traj.states.append(nxt.x)
        state = nxt
    return traj


def simulate_multirate(model, partition: MultiratePartition, rule: QuadratureRule, x0_macro, macro_controls, steps: int, strategy=None) -> MultirateTrajectory:
    """`macro_controls` rows are stacked (u^s, u^{f,0}, ..., u^{f,p-1})."""
    macro_controls = _control_rows(macro_controls, steps, partition.n_u_macro)
    state = MacroState.from_vector(x0_macro, partition)
    traj = MultirateTrajectory(partition=partition, dt=rule.dt, states=[state])
    for i in range(steps):
        try:
            nxt, micro = step_multirate_macro(model, partition, rule, state, macro_controls[i], strategy)
        except StepFailure as e:
            traj.failure = f"macro step {i}: {e}"
            logger.warning("multirate simulation stopped at macro step %d: %s", i, e)
            break
        traj.controls.append(macro_controls[i].copy())
        traj.micro.append(micro)
        traj.states.append(nxt)
        state = nxt
    return traj


def simulate_forward_euler(model, dt: float, x0, controls, steps: int) -> Trajectory:
    """Explicit Euler on q' = v(q, p), p' = dL/dq(q, v) + f(q, v, u), with v from the inverse Legendre map."""
    n = model.n_q
    controls = _control_rows(controls, steps, model.n_u)
    x = np.asarray(x0, dtype=float).reshape(-1)
    traj = Trajectory(dt=dt, n_q=n, states=[x.copy()])
    for i in range(steps):
        q, p = x[:n], x[n:]
        v = inverse_legendre(model, q, p)
        f = model.force(q, v, controls[i])
        x = np.concatenate([q + dt * v, p + dt * (model.grad_q(q, v) + f)])
        if not np.all(np.isfinite(x)):
            traj.failure = f"step {i}: non-finite state"
            break
        traj.controls.append(controls[i].copy())
        traj.forces.append(f)
        traj.states.append(x.copy())
    return traj


def simulate_successive_linearization(
    sys,
    rule: QuadratureRule,
    x0,
    controls,
    steps: int,
    seed_q: Optional[Sequence] = None,
) -> Trajectory:
    """
    Variational steps of per-step quadratic/linear surrogates.

    Without `seed_q` each surrogate is built at the current state (q_i,
    qdot_i, u_i); with a seed configuration sequence of length steps + 1 the
    points come from consecutive seed configurations.
    """
    n = sys.n_q
    controls = _control_rows(controls, steps, sys.n_u)
    if seed_q is not None and len(seed_q) != steps + 1:
        raise UsageError(f"seed has {len(seed_q)} configurations, expected {steps + 1}")
    state = DiscreteState.from_vector(x0, n)
    traj = Trajectory(dt=rule.dt, n_q=n, states=[state.x])
    for i in range(steps):
        if seed_q is None:
            point = ApproximationPoint(state.q, inverse_legendre(sys, state.q, state.p), controls[i])
        else:
            point = ApproximationPoint.from_configs(rule, seed_q[i], seed_q[i + 1], controls[i])
        surrogate = QuadraticSurrogate.at(sys, point)
        try:
            nxt = step_single_rate(surrogate, rule, state, controls[i])
        except StepFailure as e:
            traj.failure = f"step {i}: {e}"
            break
        traj.controls.append(controls[i].copy())
        traj.forces.append(_midpoint_force(surrogate, rule, state.q, nxt.q, controls[i]))
        traj.states.append(nxt.x)
        state = nxt
    return traj
