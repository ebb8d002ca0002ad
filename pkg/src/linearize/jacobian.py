"""
Jacobian linearization of the discrete dynamics, single-rate and multirate.

Single-rate anchors are triples (x_i, x_{i+1}, u_i) satisfying the discrete
equations; an ApproximationPoint may be given instead, in which case the
matched configurations q_i = q^a - c dt qdot^a, q_{i+1} = q^a + b dt qdot^a
and their momenta are used.
"""

from dataclasses import dataclass
from typing import Optional, Tuple
import logging

import numpy as np

from src.errors import UsageError
from src.integrators.multirate import MacroStack, MacroState, macro_action, step_multirate_macro
from src.integrators.quadrature import QuadratureRule
from src.integrators.single_rate import DiscreteState, interval_blocks, step_residual
from src.linearize.derivatives import FiniteDifferenceDifferentiation
from src.linearize.micro import ExtendedMultirateModel
from src.linearize.models import ApproximationPoint, LinearModel
from src.linearize.variational import QuadraticSurrogate, anchor_states, model_from_blocks
from src.models.systems import MultiratePartition

logger = logging.getLogger(__name__)

ANCHOR_TOL = 1e-8


def resolve_anchor(sys, rule: QuadratureRule, point: Optional[ApproximationPoint], anchor) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    if anchor is not None:
        x_i, x_next, u = (np.asarray(a, dtype=float).reshape(-1) for a in anchor)
        return x_i, x_next, u
    if point is None:
        raise UsageError("either an approximation point or an anchor is required")
    point.check(sys)
    q_i, q_next = point.anchor_configs(rule)
    x_i, x_next = anchor_states(sys, rule, q_i, q_next, point.u_a)
    return x_i, x_next, point.u_a


def _check_anchor(sys, rule, x_i, x_next, u) -> np.ndarray:
    n = sys.n_q
    g = step_residual(sys, rule, DiscreteState.from_vector(x_i, n), DiscreteState.from_vector(x_next, n), u)
    scale = 1.0 + max(np.max(np.abs(x_i)), np.max(np.abs(x_next)))
    if np.max(np.abs(g)) > ANCHOR_TOL * scale:
        raise UsageError(f"anchor does not satisfy the discrete dynamics (residual {np.max(np.abs(g)):.3e})")
    return g


def jacobian_linearize(
    sys,
    rule: QuadratureRule,
    point: Optional[ApproximationPoint] = None,
    anchor=None,
    strategy=None,
) -> LinearModel:
    """M, D, J = dg/dx_{i+1}, dg/dx_i, dg/du_i at the anchor."""
    x_i, x_next, u = resolve_anchor(sys, rule, point, anchor)
    g = _check_anchor(sys, rule, x_i, x_next, u)
    n = sys.n_q
    blocks = interval_blocks(sys, rule, x_i[:n], x_next[:n], u, strategy)
    M, D, J = model_from_blocks(blocks, n)
    if point is None:
        point = ApproximationPoint.from_configs(rule, x_i[:n], x_next[:n], u)
    return LinearModel(M=M, D=D, J=J, point=point, x_anchor=x_i, x_next_anchor=x_next, u_anchor=u, offset=g, method="jacobian")


def finite_difference_linearize(sys, rule: QuadratureRule, point=None, anchor=None, rel_step: float = 1e-6) -> LinearModel:
    """Central differences of the discrete residual; the accuracy oracle for jacobian_linearize."""
    x_i, x_next, u = resolve_anchor(sys, rule, point, anchor)
    n = sys.n_q

    def g(a, b, c):
        return step_residual(sys, rule, DiscreteState.from_vector(a, n), DiscreteState.from_vector(b, n), c)

    def column_diff(fn, x):
        out = []
        for k in range(x.shape[0]):
            h = rel_step * max(1.0, abs(x[k]))
            e = np.zeros_like(x)
            e[k] = h
            out.append((fn(x + e) - fn(x - e)) / (2.0 * h))
        return np.column_stack(out) if out else np.zeros((2 * n, 0))

    M = column_diff(lambda z: g(x_i, z, u), x_next)
    D = column_diff(lambda z: g(z, x_next, u), x_i)
    J = column_diff(lambda z: g(x_i, x_next, z), u)
    return LinearModel(
        M=M,
        D=D,
        J=J,
        point=ApproximationPoint.from_configs(rule, x_i[:n], x_next[:n], u),
        x_anchor=x_i,
        x_next_anchor=x_next,
        u_anchor=u,
        offset=g(x_i, x_next, u),
        method="finite-difference",
    )


# -----------------------
# Multirate
# -----------------------
@dataclass(frozen=True)
class MultirateAnchor:
    state: MacroState
    next_state: MacroState
    u_macro: np.ndarray
    y: np.ndarray

    def points(self, stack: MacroStack, rule: QuadratureRule):
        """Approximation points of the p micro intervals."""
        part = stack.partition
        return [
            ApproximationPoint.from_configs(rule, stack.node(self.y, m), stack.node(self.y, m + 1), part.micro_control(self.u_macro, m))
            for m in range(stack.p)
        ]


def multirate_anchor(sys, partition: MultiratePartition, rule: QuadratureRule, state: MacroState, u_macro) -> MultirateAnchor:
    """Anchor obtained by taking the exact macro step from `state` under `u_macro`."""
    nxt, micro = step_multirate_macro(sys, partition, rule, state, u_macro)
    y = MacroStack(partition).assemble(state.q_s, nxt.q_s, micro.q_f)
    return MultirateAnchor(state=state, next_state=nxt, u_macro=np.asarray(u_macro, dtype=float).reshape(-1), y=y)


def linearize_multirate(
    sys,
    partition: MultiratePartition,
    rule: QuadratureRule,
    anchor: MultirateAnchor,
    method: str = "jacobian",
    strategy=None,
) -> Tuple[LinearModel, ExtendedMultirateModel]:
    """
    Macro linear model with the interior micro nodes eliminated.

    `method` selects the Jacobian route or the quadratic/linear surrogate route
    (one surrogate per micro interval at its anchor point).
    """
    stack = MacroStack(partition)
    if method == "jacobian":
        model = sys
    elif method == "variational":
        model = [QuadraticSurrogate.at(sys, pt) for pt in anchor.points(stack, rule)]
    elif method == "finite-difference":
        model, strategy = sys, FiniteDifferenceDifferentiation()
    else:
        raise UsageError(f"unknown linearization method {method!r}")

    action = macro_action(model, stack, rule, anchor.y, anchor.u_macro, strategy)
    ext = ExtendedMultirateModel(stack=stack, action=action, y_anchor=anchor.y, u_anchor=anchor.u_macro)
    M, D, J = ext.schur()

    offset = ext.reduce_rows(action.gamma) + np.concatenate(
        [anchor.state.p_s, anchor.state.p_f0, anchor.next_state.p_s, anchor.next_state.p_f0]
    )
    return (
        LinearModel(
            M=M,
            D=D,
            J=J,
            point=None,
            x_anchor=anchor.state.x,
            x_next_anchor=anchor.next_state.x,
            u_anchor=anchor.u_macro,
            offset=offset,
            method=method,
        ),
        ext,
    )
