"""
Polytopic bounds on the linearization error.

With h = (dt L_q, L_v, dt/2 f) evaluated at xi = (q_bar, v, u), the exact
interval terms are G1 = b h1 - h2 + h3 and G2 = c h1 + h2 + h3, and the
linear model replaces h by h(a) + H(a) xi. By the mean-value theorem the
remainder is

    h(a + xi) - h(a) - H(a) xi = Delta xi,   Delta = int_0^1 (H(a + s xi) - H(a)) ds.

Every non-constant entry of H is a channel. A channel's contribution to
Delta lies in [lo, hi], the range of H_k(a + zeta) - H_k(a) over the
region, estimated on a grid along the axes the entry depends on and
inflated. Entries with identical expressions share one channel. The error
is linear in the channel values, so the corners of the channel box give
the vertices (2^channels of them).

The next configuration inside xi is taken from the linear prediction
A dx + B du, neglecting the disturbance itself; the sampling check in this
module guards that approximation.
"""

from dataclasses import dataclass
from itertools import product
from typing import Callable, List, Optional, Sequence, Tuple
import logging

import numpy as np
import sympy as sp
from scipy.optimize import linprog

from src.config import BOUND_INFLATION, DEFAULT_SEED, GRID_POINTS
from src.errors import BoundError, UsageError
from src.integrators.multirate import MacroStack, MacroState, step_multirate_macro
from src.integrators.quadrature import QuadratureRule
from src.integrators.single_rate import DiscreteState, step_single_rate
from src.linearize.jacobian import jacobian_linearize
from src.linearize.micro import ExtendedMultirateModel
from src.linearize.models import ApproximationPoint, DisturbanceVertexSet, LinearModel
from src.models.systems import LagrangianSystem, MultiratePartition, Region

logger = logging.getLogger(__name__)

MAX_CHANNELS = 10


@dataclass(frozen=True)
class RemainderChannel:
    name: str
    entries: Tuple[Tuple[int, int], ...]  # positions in H (rows: L_q, L_v, f blocks; cols: q_bar, v, u)
    axes: Tuple[int, ...]
    lo: float
    hi: float


@dataclass(frozen=True)
class _ChannelTerm:
    name: str
    entries: Tuple[Tuple[int, int], ...]
    axes: Tuple[int, ...]
    fn: Callable


_STRUCTURE_CACHE: dict = {}


def _h_jacobian(sys: LagrangianSystem) -> sp.Matrix:
    """Jacobian of (L_q, L_v, f) with respect to (q, qdot, u); the dt scalings are applied later."""
    q, v, u = sp.Matrix(sys.q), sp.Matrix(sys.qdot), sp.Matrix(sys.u)
    L = sp.Matrix([sys.lagrangian_expr])
    stacked = sp.Matrix.vstack(L.jacobian(q).T, L.jacobian(v).T, sp.Matrix(sys.force_expr))
    return stacked.jacobian(sp.Matrix.vstack(q, v, u))


def _channel_terms(sys: LagrangianSystem) -> List[_ChannelTerm]:
    """Non-constant entries of H grouped by expression, compiled once per system object."""
    cached = _STRUCTURE_CACHE.get(id(sys))
    if cached is not None and cached[0] is sys:
        return cached[1]
    H = _h_jacobian(sys)
    args = sys.arguments
    groups = {}
    for r in range(H.rows):
        for c in range(H.cols):
            expr = sp.simplify(H[r, c])
            if expr.free_symbols:
                groups.setdefault(expr, []).append((r, c))
    terms = []
    for expr, entries in groups.items():
        axes = tuple(sorted(args.index(s) for s in expr.free_symbols))
        fn = sp.lambdify([args[a] for a in axes], expr, modules="numpy")
        terms.append(_ChannelTerm(name=str(expr), entries=tuple(entries), axes=axes, fn=fn))
    _STRUCTURE_CACHE[id(sys)] = (sys, terms)
    return terms


def remainder_channels(
    sys: LagrangianSystem,
    point: ApproximationPoint,
    region: Region,
    grid_points: int = GRID_POINTS,
    inflation: float = BOUND_INFLATION,
) -> List[RemainderChannel]:
    point.check(sys)
    args = sys.arguments
    anchor = np.concatenate([point.q_a, point.qdot_a, point.u_a])
    radius = region.radius

    channels = []
    for term in _channel_terms(sys):
        unbounded = [args[a].name for a in term.axes if not np.isfinite(radius[a])]
        if unbounded:
            raise BoundError(f"derivative depends on unbounded region axes {unbounded}", term=term.name)
        centre = anchor[list(term.axes)]
        base = float(term.fn(*centre))
        grids = np.meshgrid(*[c + np.linspace(-radius[a], radius[a], grid_points) for c, a in zip(centre, term.axes)], indexing="ij")
        values = np.broadcast_to(np.asarray(term.fn(*grids), dtype=float), grids[0].shape) - base
        if not np.all(np.isfinite(values)):
            raise BoundError("derivative is not finite on the region", term=term.name)
        lo, hi = float(min(values.min(), 0.0)), float(max(values.max(), 0.0))
        width = hi - lo
        lo, hi = lo - inflation * width, hi + inflation * width
        channels.append(RemainderChannel(name=term.name, entries=term.entries, axes=term.axes, lo=lo, hi=hi))
        logger.debug("channel %s on axes %s: [%.3e, %.3e]", term.name, term.axes, lo, hi)

    if len(channels) > MAX_CHANNELS:
        raise UsageError(f"{len(channels)} remainder channels exceed the vertex limit of 2^{MAX_CHANNELS}")
    return channels


def merge_channels(channel_lists: Sequence[List[RemainderChannel]]) -> List[RemainderChannel]:
    """Union of the ranges of matching channels computed at several points."""
    merged = {}
    for channels in channel_lists:
        for ch in channels:
            if ch.name in merged:
                old = merged[ch.name]
                merged[ch.name] = RemainderChannel(ch.name, ch.entries, ch.axes, min(old.lo, ch.lo), max(old.hi, ch.hi))
            else:
                merged[ch.name] = ch
    return list(merged.values())


def _delta(sys: LagrangianSystem, rule: QuadratureRule, channels: Sequence[RemainderChannel], theta: Sequence[float]) -> np.ndarray:
    """Delta(theta) with the h scalings (dt, 1, dt/2) applied to its row blocks."""
    n = sys.n_q
    Delta = np.zeros((3 * n, 2 * n + sys.n_u))
    for ch, t in zip(channels, theta):
        for r, c in ch.entries:
            Delta[r, c] += t
    scale = np.concatenate([np.full(n, rule.dt), np.ones(n), np.full(n, 0.5 * rule.dt)])
    return scale[:, None] * Delta


def _term_maps(n: int, rule: QuadratureRule) -> Tuple[np.ndarray, np.ndarray]:
    """P1, P2 with G1 = P1 h and G2 = P2 h."""
    I = np.eye(n)
    return np.hstack([rule.b * I, -I, I]), np.hstack([rule.c * I, I, I])


def _corners(channels: Sequence[RemainderChannel]):
    return product(*[(ch.lo, ch.hi) for ch in channels])


def _xi_maps(n: int, n_u: int, rule: QuadratureRule) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """xi = X0 dx_i + X1 dx_{i+1} + Xu du for states x = (q, p)."""
    I, Z = np.eye(n), np.zeros((n, n))
    X0 = np.vstack([np.hstack([rule.b * I, Z]), np.hstack([-I / rule.dt, Z]), np.zeros((n_u, 2 * n))])
    X1 = np.vstack([np.hstack([rule.c * I, Z]), np.hstack([I / rule.dt, Z]), np.zeros((n_u, 2 * n))])
    Xu = np.vstack([np.zeros((2 * n, n_u)), np.eye(n_u)])
    return X0, X1, Xu


def error_vertex_set(
    sys: LagrangianSystem,
    rule: QuadratureRule,
    point: ApproximationPoint,
    region: Region,
    model: Optional[LinearModel] = None,
) -> DisturbanceVertexSet:
    """Vertices (C^j, D^j) with w = x_{i+1} - (A dx + B du) in Co{C^j dx + D^j du} on `region`."""
    if model is None:
        model = jacobian_linearize(sys, rule, point)
    n, n_u = sys.n_q, sys.n_u
    channels = remainder_channels(sys, point, region)
    if not channels:
        return DisturbanceVertexSet.zero(model.n_x, model.n_u, region)

    P1, P2 = _term_maps(n, rule)
    P = np.vstack([P1, -P2])
    X0, X1, Xu = _xi_maps(n, n_u, rule)
    Xx = X0 + X1 @ model.A
    Xu = Xu + X1 @ model.B
    Minv = np.linalg.inv(model.M)

    vertices = []
    for theta in _corners(channels):
        E = -Minv @ P @ _delta(sys, rule, channels, theta)
        vertices.append((E @ Xx, E @ Xu))
    logger.info("error vertex set: %d channels, %d vertices", len(channels), len(vertices))
    return DisturbanceVertexSet(vertices=tuple(vertices), region=region, channels=tuple(ch.name for ch in channels))


@dataclass(frozen=True)
class TrustMaps:
    """Deviation of the expansion point xi = Tx dx + Tu du along the linear prediction, bounded by |xi| <= radius."""

    Tx: np.ndarray
    Tu: np.ndarray
    radius: np.ndarray

    def finite(self) -> "TrustMaps":
        keep = np.isfinite(self.radius)
        return TrustMaps(self.Tx[keep], self.Tu[keep], self.radius[keep])

    def contains(self, dx, du, slack: float = 1e-9) -> bool:
        xi = self.Tx @ dx + self.Tu @ du
        return bool(np.all(np.abs(xi) <= self.radius * (1.0 + slack) + slack))


def trust_maps(sys: LagrangianSystem, rule: QuadratureRule, model: LinearModel, region: Region) -> TrustMaps:
    X0, X1, Xu = _xi_maps(sys.n_q, sys.n_u, rule)
    return TrustMaps(X0 + X1 @ model.A, Xu + X1 @ model.B, region.radius)


def multirate_trust_maps(rule: QuadratureRule, ext: ExtendedMultirateModel, model: LinearModel, region: Region) -> TrustMaps:
    """One block of rows per micro interval; the region applies around every interval's point."""
    Ty_x, Ty_u = ext.y_maps(model.A, model.B)
    Tx, Tu = [], []
    for m in range(ext.stack.p):
        Xy, Xu = _interval_xi(ext.stack, rule, m)
        Tx.append(Xy @ Ty_x)
        Tu.append(Xy @ Ty_u + Xu)
    return TrustMaps(np.vstack(Tx), np.vstack(Tu), np.tile(region.radius, ext.stack.p))


# -----------------------
# Multirate
# -----------------------
@dataclass(frozen=True)
class MicroDependentVertexSet:
    """w in Co{W^j dx + O^j du + X^j zeta}, zeta the interior micro deviations."""

    W: Tuple[np.ndarray, ...]
    O: Tuple[np.ndarray, ...]
    X: Tuple[np.ndarray, ...]
    region: Region
    channels: Tuple[str, ...] = ()


@dataclass(frozen=True)
class MicroVertexSet:
    """zeta in Co{Y^l dx + Z^l du}."""

    Y: Tuple[np.ndarray, ...]
    Z: Tuple[np.ndarray, ...]


def _interval_xi(stack: MacroStack, rule: QuadratureRule, m: int) -> Tuple[np.ndarray, np.ndarray]:
    """xi_m = Xy dy + Xu du_macro for micro interval m."""
    part = stack.partition
    Pa, Pb = stack.node_maps[m], stack.node_maps[m + 1]
    n_u = part.n_u
    Xy = np.vstack([rule.b * Pa + rule.c * Pb, (Pb - Pa) / rule.dt, np.zeros((n_u, stack.n_y))])
    Xu = np.vstack([np.zeros((2 * part.n_q, part.n_u_macro)), part.micro_control_map(m)])
    return Xy, Xu


def _gamma_remainder(sys, stack: MacroStack, rule: QuadratureRule, channels, theta) -> Tuple[np.ndarray, np.ndarray]:
    """Gamma remainder = Gy dy + Gu du for one corner of the channel box (shared by all micro intervals)."""
    P1, P2 = _term_maps(sys.n_q, rule)
    Delta = _delta(sys, rule, channels, theta)
    Gy = np.zeros((stack.n_y, stack.n_y))
    Gu = np.zeros((stack.n_y, stack.partition.n_u_macro))
    for m in range(stack.p):
        Pa, Pb = stack.node_maps[m], stack.node_maps[m + 1]
        Xy, Xu = _interval_xi(stack, rule, m)
        T = (Pa.T @ P1 + Pb.T @ P2) @ Delta
        Gy += T @ Xy
        Gu += T @ Xu
    return Gy, Gu


def _multirate_channels(sys, anchor_points, region: Region):
    return merge_channels([remainder_channels(sys, pt, region) for pt in anchor_points])


def multirate_error_vertex_set(
    sys: LagrangianSystem,
    rule: QuadratureRule,
    ext: ExtendedMultirateModel,
    model: LinearModel,
    anchor_points: Sequence[ApproximationPoint],
    region: Region,
) -> DisturbanceVertexSet:
    """Direct macro set: micro deviations substituted by their linear response, n_j vertices."""
    stack = ext.stack
    channels = _multirate_channels(sys, anchor_points, region)
    if not channels:
        return DisturbanceVertexSet.zero(model.n_x, model.n_u, region)

    Ty_x, Ty_u = ext.y_maps(model.A, model.B)
    Minv = np.linalg.inv(model.M)
    vertices = []
    for theta in _corners(channels):
        Gy, Gu = _gamma_remainder(sys, stack, rule, channels, theta)
        C = -Minv @ ext.reduce_rows(Gy @ Ty_x)
        D = -Minv @ ext.reduce_rows(Gy @ Ty_u + Gu)
        vertices.append((C, D))
    return DisturbanceVertexSet(vertices=tuple(vertices), region=region, channels=tuple(ch.name for ch in channels))


def multirate_component_sets(
    sys: LagrangianSystem,
    rule: QuadratureRule,
    ext: ExtendedMultirateModel,
    model: LinearModel,
    anchor_points: Sequence[ApproximationPoint],
    region: Region,
) -> Tuple[MicroDependentVertexSet, MicroVertexSet]:
    """Macro set with explicit micro dependence and the micro-deviation set, for combination."""
    stack = ext.stack
    channels = _multirate_channels(sys, anchor_points, region)
    A, B = model.A, model.B
    Zx, Zu = ext.interior_response(A, B)
    Ty_x, Ty_u = ext.y_maps(A, B)
    T0_x = ext.Y0 + ext.Y1 @ A
    T0_u = ext.Y1 @ B
    Minv = np.linalg.inv(model.M)
    n_x, n_u, n_z = model.n_x, model.n_u, ext.n_z

    if not channels:
        zero = MicroDependentVertexSet(W=(np.zeros((n_x, n_x)),), O=(np.zeros((n_x, n_u)),), X=(np.zeros((n_x, n_z)),), region=region)
        return zero, MicroVertexSet(Y=(Zx,), Z=(Zu,))

    W, O, X, Y, Z = [], [], [], [], []
    for theta in _corners(channels):
        Gy, Gu = _gamma_remainder(sys, stack, rule, channels, theta)
        W.append(-Minv @ ext.reduce_rows(Gy @ T0_x))
        O.append(-Minv @ ext.reduce_rows(Gy @ T0_u + Gu))
        X.append(-Minv @ ext.reduce_rows(Gy @ ext.Yz))
        if n_z:
            Y.append(Zx - ext.Ez_inv @ ext.Ri @ Gy @ Ty_x)
            Z.append(Zu - ext.Ez_inv @ ext.Ri @ (Gy @ Ty_u + Gu))
        else:
            Y.append(Zx)
            Z.append(Zu)
    names = tuple(ch.name for ch in channels)
    return MicroDependentVertexSet(W=tuple(W), O=tuple(O), X=tuple(X), region=region, channels=names), MicroVertexSet(Y=tuple(Y), Z=tuple(Z))


def _dedupe(vertices: List[Tuple[np.ndarray, np.ndarray]], tol: float = 1e-12) -> List[Tuple[np.ndarray, np.ndarray]]:
    unique = []
    for C, D in vertices:
        scale = 1.0 + max(np.max(np.abs(C), initial=0.0), np.max(np.abs(D), initial=0.0))
        if not any(np.allclose(C, C2, atol=tol * scale, rtol=0) and np.allclose(D, D2, atol=tol * scale, rtol=0) for C2, D2 in unique):
            unique.append((C, D))
    return unique


def combine_multirate_vertices(w_set: MicroDependentVertexSet, micro: MicroVertexSet) -> DisturbanceVertexSet:
    """
    Substitute zeta in Co{Y^l dx + Z^l du} into the micro-dependent macro set.

    Each pair (j, l) gives C = W^j + X^j Y^l, D = O^j + X^j Z^l, so up to
    n_j * n_l vertices remain after removing duplicates.
    """
    if not w_set.W or not micro.Y:
        raise UsageError("both vertex sets need at least one vertex")
    n_z = w_set.X[0].shape[1]
    if micro.Y[0].shape[0] != n_z or micro.Y[0].shape[1] != w_set.W[0].shape[1] or micro.Z[0].shape[1] != w_set.O[0].shape[1]:
        raise UsageError("micro vertex set does not match the macro error set dimensions")

    vertices = []
    for Wj, Oj, Xj in zip(w_set.W, w_set.O, w_set.X):
        for Yl, Zl in zip(micro.Y, micro.Z):
            vertices.append((Wj + Xj @ Yl, Oj + Xj @ Zl))
    vertices = _dedupe(vertices)
    logger.info("combined multirate vertex set: %d x %d -> %d vertices", len(w_set.W), len(micro.Y), len(vertices))
    return DisturbanceVertexSet(vertices=tuple(vertices), region=w_set.region, channels=w_set.channels)


# -----------------------
# Soundness sampling
# -----------------------
@dataclass(frozen=True)
class SoundnessReport:
    n_samples: int
    n_attempts: int
    max_slack: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_slack <= self.tol


def hull_slack(points: np.ndarray, target: np.ndarray) -> float:
    """Smallest s with ||sum_j lam_j points_j - target||_inf <= s over the simplex (LP)."""
    n_j, dim = points.shape
    if n_j == 1:
        return float(np.max(np.abs(points[0] - target), initial=0.0))
    # variables: lam (n_j), s
    c = np.zeros(n_j + 1)
    c[-1] = 1.0
    ones = np.ones((dim, 1))
    A_ub = np.vstack([np.hstack([points.T, -ones]), np.hstack([-points.T, -ones])])
    b_ub = np.concatenate([target, -target])
    A_eq = np.hstack([np.ones((1, n_j)), np.zeros((1, 1))])
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=[1.0], bounds=[(0, None)] * (n_j + 1), method="highs")
    if res.status != 0:
        return float("inf")
    return float(res.x[-1])


def _draw(rng, radius: np.ndarray, fallback: float) -> np.ndarray:
    r = np.where(np.isfinite(radius), radius, fallback)
    return rng.uniform(-1.0, 1.0, size=r.shape) * r


def _in_region(xi: np.ndarray, region: Region, slack: float = 1e-12) -> bool:
    return bool(np.all(np.abs(xi) <= region.radius + slack))


def _sample(
    n_samples: int,
    rng,
    draw: Callable,
    evaluate: Callable,
    vset: DisturbanceVertexSet,
    tol: float,
    max_attempts: int,
) -> SoundnessReport:
    accepted, attempts, worst = 0, 0, 0.0
    while accepted < n_samples and attempts < max_attempts:
        attempts += 1
        dx, du = draw()
        result = evaluate(dx, du)
        if result is None:
            continue
        w = result
        worst = max(worst, hull_slack(vset.images(dx, du), w))
        accepted += 1
    if accepted < n_samples:
        logger.warning("soundness sampling accepted only %d of %d requested samples", accepted, n_samples)
    return SoundnessReport(n_samples=accepted, n_attempts=attempts, max_slack=worst, tol=tol)


def check_soundness(
    sys: LagrangianSystem,
    rule: QuadratureRule,
    model: LinearModel,
    vset: DisturbanceVertexSet,
    n_samples: int = 1000,
    seed: int = DEFAULT_SEED,
    tol: float = 1e-6,
    fallback_radius: float = 0.5,
) -> SoundnessReport:
    """Sample deviations inside the region and test the true disturbance for hull membership."""
    rng = np.random.default_rng(seed)
    n = sys.n_q
    region = vset.region
    point = model.point

    def draw():
        dq = _draw(rng, region.q_radius, fallback_radius)
        dp = _draw(rng, region.v_radius, fallback_radius)
        du = _draw(rng, region.u_radius, fallback_radius)
        return np.concatenate([dq, dp]), du

    def evaluate(dx, du):
        x0 = model.x_anchor + dx
        u = model.u_anchor + du
        nxt = step_single_rate(sys, rule, DiscreteState.from_vector(x0, n), u)
        pt = ApproximationPoint.from_configs(rule, x0[:n], nxt.q, u)
        xi = np.concatenate([pt.q_a - point.q_a, pt.qdot_a - point.qdot_a, pt.u_a - point.u_a])
        if not _in_region(xi, region):
            return None
        return nxt.x - model.predict(x0, u)

    return _sample(n_samples, rng, draw, evaluate, vset, tol, max_attempts=50 * n_samples)


def check_multirate_soundness(
    sys: LagrangianSystem,
    partition: MultiratePartition,
    rule: QuadratureRule,
    model: LinearModel,
    anchor_points: Sequence[ApproximationPoint],
    vset: DisturbanceVertexSet,
    n_samples: int = 1000,
    seed: int = DEFAULT_SEED,
    tol: float = 1e-6,
    fallback_radius: float = 0.5,
) -> SoundnessReport:
    rng = np.random.default_rng(seed)
    region = vset.region
    stack = MacroStack(partition)
    S = partition.q_selector()

    def draw():
        dq = S.T @ _draw(rng, region.q_radius, fallback_radius)
        dp = S.T @ _draw(rng, region.v_radius, fallback_radius)
        du_s = partition.split_u(_draw(rng, region.u_radius, fallback_radius))[0]
        du_f = [partition.split_u(_draw(rng, region.u_radius, fallback_radius))[1] for _ in range(partition.micro_steps)]
        return np.concatenate([dq, dp]), partition.macro_control(du_s, du_f)

    def evaluate(dx, du):
        x0 = model.x_anchor + dx
        u = model.u_anchor + du
        state = MacroState.from_vector(x0, partition)
        nxt, micro = step_multirate_macro(sys, partition, rule, state, u)
        y = stack.assemble(state.q_s, nxt.q_s, micro.q_f)
        for m, ref in enumerate(anchor_points):
            pt = ApproximationPoint.from_configs(rule, stack.node(y, m), stack.node(y, m + 1), partition.micro_control(u, m))
            xi = np.concatenate([pt.q_a - ref.q_a, pt.qdot_a - ref.qdot_a, pt.u_a - ref.u_a])
            if not _in_region(xi, region):
                return None
        return nxt.x - model.predict(x0, u)

    return _sample(n_samples, rng, draw, evaluate, vset, tol, max_attempts=50 * n_samples)
