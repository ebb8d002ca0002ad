"""
Plants: the nonlinear discrete model the controller acts on, together with
the linearization and error bounds used by the RHOCP at each horizon step.

A single-rate plant steps every Δt; a multirate plant steps on the macro grid
with the stacked control (u^s, u^{f,0}, ..., u^{f,p-1}).
"""

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple
import logging

import numpy as np

from src.errors import UsageError
from src.integrators.multirate import MacroStack, MacroState, step_multirate_macro
from src.integrators.quadrature import QuadratureRule
from src.integrators.single_rate import DiscreteState, step_residual, step_single_rate
from src.linearize.bounds import (
    combine_multirate_vertices,
    error_vertex_set,
    multirate_component_sets,
    multirate_error_vertex_set,
    multirate_trust_maps,
    trust_maps,
    TrustMaps,
)
from src.linearize.jacobian import MultirateAnchor, jacobian_linearize, linearize_multirate, multirate_anchor
from src.linearize.micro import micro_eliminate
from src.linearize.models import ApproximationPoint, DisturbanceVertexSet, LinearModel, MicroMaps
from src.linearize.variational import variational_linearize
from src.models.systems import LagrangianSystem, MultiratePartition, Region

logger = logging.getLogger(__name__)

LINEARIZATIONS = ("jacobian", "variational")
MICRO_BOUNDS = ("direct", "combined")


@dataclass(frozen=True)
class MicroNodeMap:
    """Full configuration at an interior micro node: q = q_anchor + Lx dx + Lu du."""

    q_anchor: np.ndarray
    Lx: np.ndarray
    Lu: np.ndarray


@dataclass(frozen=True)
class LinearizedStep:
    model: LinearModel
    vertex_set: DisturbanceVertexSet
    trust: Optional[TrustMaps] = None
    micro_maps: Optional[MicroMaps] = None
    micro_nodes: Tuple[MicroNodeMap, ...] = ()


def _zero_vertex_set(model: LinearModel, region: Optional[Region]) -> DisturbanceVertexSet:
    return DisturbanceVertexSet.zero(model.n_x, model.n_u, region)


class SingleRatePlant:
    def __init__(self, sys: LagrangianSystem, rule: QuadratureRule, linearization: str = "jacobian", strategy=None):
        if linearization not in LINEARIZATIONS:
            raise UsageError(f"unknown linearization {linearization!r}")
        self.sys = sys
        self.rule = rule
        self.linearization = linearization
        self.strategy = strategy
        self.micro_rows = None

    @property
    def n_x(self) -> int:
        return self.sys.n_x

    @property
    def n_u(self) -> int:
        return self.sys.n_u

    @property
    def control_dt(self) -> float:
        return self.rule.dt

    @property
    def micro_steps(self) -> int:
        return 1

    def equilibrium(self) -> Tuple[np.ndarray, np.ndarray]:
        q, v, u = self.sys.equilibrium
        x = DiscreteState(q=q, p=self.sys.grad_v(q, v)).x
        return x, np.asarray(u, dtype=float)

    def step(self, x, u) -> np.ndarray:
        n = self.sys.n_q
        return step_single_rate(self.sys, self.rule, DiscreteState.from_vector(x, n), u, self.strategy).x

    def residual(self, x, u, x_next) -> float:
        n = self.sys.n_q
        g = step_residual(self.sys, self.rule, DiscreteState.from_vector(x, n), DiscreteState.from_vector(x_next, n), u)
        return float(np.max(np.abs(g)))

    def rollout(self, x0, controls: Sequence) -> np.ndarray:
        states = [np.asarray(x0, dtype=float)]
        for u in controls:
            states.append(self.step(states[-1], u))
        return np.asarray(states)

    def linearize(self, x, u, x_next) -> LinearModel:
        n = self.sys.n_q
        anchor = (x, x_next, u)
        if self.linearization == "variational":
            point = ApproximationPoint.from_configs(self.rule, x[:n], x_next[:n], u)
            return variational_linearize(self.sys, self.rule, point, anchor=anchor, strategy=self.strategy)
        return jacobian_linearize(self.sys, self.rule, anchor=anchor, strategy=self.strategy)

    def linearize_step(self, x, u, x_next, region: Optional[Region]) -> LinearizedStep:
        model = self.linearize(x, u, x_next)
        if region is None:
            return LinearizedStep(model=model, vertex_set=_zero_vertex_set(model, region))
        return LinearizedStep(
            model=model,
            vertex_set=error_vertex_set(self.sys, self.rule, model.point, region, model),
            trust=trust_maps(self.sys, self.rule, model, region).finite(),
        )

    def origin_step(self, region: Optional[Region]) -> LinearizedStep:
        x, u = self.equilibrium()
        return self.linearize_step(x, u, self.step(x, u), region)


class MultiratePlant:
    def __init__(
        self,
        sys: LagrangianSystem,
        partition: MultiratePartition,
        rule: QuadratureRule,
        linearization: str = "jacobian",
        micro_bounds: str = "direct",
        micro_rows: Optional[Tuple[np.ndarray, np.ndarray]] = None,
        strategy=None,
    ):
        if linearization not in LINEARIZATIONS:
            raise UsageError(f"unknown linearization {linearization!r}")
        if micro_bounds not in MICRO_BOUNDS:
            raise UsageError(f"unknown micro bound construction {micro_bounds!r}")
        partition.check(sys)
        self.sys = sys
        self.partition = partition
        self.rule = rule
        self.linearization = linearization
        self.micro_bounds = micro_bounds
        self.micro_rows = micro_rows
        self.strategy = strategy
        self.stack = MacroStack(partition)

    @property
    def n_x(self) -> int:
        return self.partition.n_x

    @property
    def n_u(self) -> int:
        return self.partition.n_u_macro

    @property
    def control_dt(self) -> float:
        return self.partition.micro_steps * self.rule.dt

    @property
    def micro_steps(self) -> int:
        return self.partition.micro_steps

    def equilibrium(self) -> Tuple[np.ndarray, np.ndarray]:
        q, v, u = self.sys.equilibrium
        part = self.partition
        x = part.macro_state(np.concatenate([q, self.sys.grad_v(q, v)]))
        u_s, u_f = part.split_u(u)
        return x, part.macro_control(u_s, [u_f] * part.micro_steps)

    def step(self, x, u) -> np.ndarray:
        state = MacroState.from_vector(x, self.partition)
        return step_multirate_macro(self.sys, self.partition, self.rule, state, u, self.strategy)[0].x

    def residual(self, x, u, x_next) -> float:
        return float(np.max(np.abs(self.step(x, u) - np.asarray(x_next, dtype=float))))

    def rollout(self, x0, controls: Sequence) -> np.ndarray:
        states = [np.asarray(x0, dtype=float)]
        for u in controls:
            states.append(self.step(states[-1], u))
        return np.asarray(states)

    def anchor(self, x, u) -> MultirateAnchor:
        return multirate_anchor(self.sys, self.partition, self.rule, MacroState.from_vector(x, self.partition), u)

    def linearize_step(self, x, u, x_next, region: Optional[Region]) -> LinearizedStep:
        anchor = self.anchor(x, u)
        x_next = np.asarray(x_next, dtype=float)
        if np.max(np.abs(anchor.next_state.x - x_next)) > 1e-8 * (1.0 + np.max(np.abs(x_next))):
            raise UsageError("macro anchor does not reproduce the seed transition")
        model, ext = linearize_multirate(self.sys, self.partition, self.rule, anchor, self.linearization, self.strategy)
        maps = micro_eliminate(ext, model)
        nodes = self._micro_nodes(anchor, ext, model)

        if region is None:
            return LinearizedStep(model=model, vertex_set=_zero_vertex_set(model, region), micro_maps=maps, micro_nodes=nodes)
        points = anchor.points(self.stack, self.rule)
        if self.micro_bounds == "combined":
            vset = combine_multirate_vertices(*multirate_component_sets(self.sys, self.rule, ext, model, points, region))
        else:
            vset = multirate_error_vertex_set(self.sys, self.rule, ext, model, points, region)
        return LinearizedStep(
            model=model,
            vertex_set=vset,
            trust=multirate_trust_maps(self.rule, ext, model, region).finite(),
            micro_maps=maps,
            micro_nodes=nodes,
        )

    def _micro_nodes(self, anchor: MultirateAnchor, ext, model: LinearModel) -> Tuple[MicroNodeMap, ...]:
        """Configuration maps of the interior micro nodes along the linear macro prediction."""
        Ty_x, Ty_u = ext.y_maps(model.A, model.B)
        st = self.stack
        return tuple(
            MicroNodeMap(q_anchor=st.node(anchor.y, m), Lx=st.node_maps[m] @ Ty_x, Lu=st.node_maps[m] @ Ty_u)
            for m in range(1, st.p)
        )

    def origin_step(self, region: Optional[Region]) -> LinearizedStep:
        x, u = self.equilibrium()
        return self.linearize_step(x, u, self.step(x, u), region)
