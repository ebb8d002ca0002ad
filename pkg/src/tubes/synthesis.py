"""
Offline and per-step tube synthesis by semidefinite programming.

All problems use the usual change of variables S = V^{-1}, Y = K S. The
deviation dynamics under u = K x with a vertex disturbance C^j x + D^j u are
x+ = (A_j + B_j K) x with A_j = A + C^j, B_j = B + D^j.

Every returned matrix is re-checked by evaluating the eigenvalues of its
defining inequalities; a negative slack beyond LMI_SLACK_TOL is an error.
"""

from typing import List, Optional, Sequence, Tuple
import logging

import cvxpy as cp
import numpy as np
from scipy.linalg import solve_discrete_are

from src.config import LMI_SLACK_TOL, SDP_TOL
from src.conic.backend import solve_sdp
from src.conic.problems import SdpProblem, lmi
from src.errors import InfeasibleProblem, UsageError, VerificationError, VmpcError
from src.linearize.models import DisturbanceVertexSet
from src.tubes.ellipsoid import Ellipsoid
from src.tubes.policy import TubePolicy

logger = logging.getLogger(__name__)

MIN_EIG = 1e-8


def _vertex_dynamics(A: np.ndarray, B: np.ndarray, vset: Optional[DisturbanceVertexSet]) -> List[Tuple[np.ndarray, np.ndarray]]:
    if vset is None:
        return [(A, B)]
    if vset.n_x != A.shape[0] or vset.n_u != B.shape[1]:
        raise UsageError(f"vertex set is {vset.n_x}x{vset.n_u}, model is {A.shape[0]}x{B.shape[1]}")
    return [(A + C, B + D) for C, D in vset.vertices]


def _min_eig(M: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(0.5 * (M + M.T))[0])


def _require(slack: float, what: str) -> float:
    if slack < -LMI_SLACK_TOL:
        raise VerificationError(f"{what}: matrix inequality violated by {-slack:.3e}")
    return slack


def lqr_gain(A: np.ndarray, B: np.ndarray, Q: np.ndarray, R: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Infinite-horizon gain K (u = K x) and Riccati solution X."""
    X = solve_discrete_are(A, B, Q, R)
    K = -np.linalg.solve(R + B.T @ X @ B, B.T @ X @ A)
    return K, X


def _spectral_radius(M: np.ndarray) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(M)), initial=0.0))


# -----------------------
# Terminal weight
# -----------------------
def terminal_weight_slack(P, Phi_hat, K_hat, vset, Q, R) -> float:
    stage = Q + K_hat.T @ R @ K_hat
    n, m = Phi_hat.shape[0], K_hat.shape[0]
    vertices = vset.vertices if vset is not None else [(np.zeros((n, n)), np.zeros((n, m)))]
    closed = [Phi_hat + C + D @ K_hat for C, D in vertices]
    return min(_min_eig(P - Pj.T @ P @ Pj - stage) for Pj in closed)


def solve_terminal_weight(Phi_hat, K_hat, vset: Optional[DisturbanceVertexSet], Q, R, tol: float = SDP_TOL) -> np.ndarray:
    """Minimal-trace P with P - Phi_j' P Phi_j >= Q + K' R K for Phi_j = Phi_hat + C^j + D^j K_hat."""
    Phi_hat = np.atleast_2d(np.asarray(Phi_hat, dtype=float))
    K_hat = np.atleast_2d(np.asarray(K_hat, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    n = Phi_hat.shape[0]

    vertices = vset.vertices if vset is not None else [(np.zeros((n, n)), np.zeros((n, K_hat.shape[0])))]
    closed = [Phi_hat + C + D @ K_hat for C, D in vertices]
    for j, Pj in enumerate(closed):
        if _spectral_radius(Pj) >= 1.0:
            raise InfeasibleProblem(f"closed loop at vertex {j} is not Schur stable (spectral radius {_spectral_radius(Pj):.4f})", family=f"vertex {j}")

    stage = Q + K_hat.T @ R @ K_hat
    P = cp.Variable((n, n), symmetric=True)
    constraints = [lmi(P - Pj.T @ P @ Pj - stage) for Pj in closed]
    problem = SdpProblem({"P": P}, cp.Minimize(cp.trace(P)), constraints, name="terminal weight", families={"decrease": list(range(len(closed)))})
    sol = solve_sdp(problem, tol)

    P_val = 0.5 * (sol["P"] + sol["P"].T)
    slack = _require(terminal_weight_slack(P_val, Phi_hat, K_hat, vset, Q, R) / max(1.0, np.linalg.norm(P_val, 2)), "terminal weight")
    logger.info("terminal weight: trace %.6g, slack %.3e over %d vertices", np.trace(P_val), slack, len(closed))
    return P_val


# -----------------------
# Terminal set
# -----------------------
def _finite_rows(F, G, h):
    keep = np.isfinite(h)
    return F[keep], G[keep], h[keep]


def terminal_set_slacks(K_hat, V_hat, A, B, vset, F, G, h, P, rho) -> dict:
    """Slacks of invariance, admissibility and the rho cap for E(V_hat, 1)."""
    S = np.linalg.inv(V_hat)
    out = {"invariance": step_containment_slack(K_hat, V_hat, V_hat, A, B, vset) / max(1.0, np.linalg.norm(V_hat, 2))}
    Ff, Gf, hf = _finite_rows(F, G, h)
    rows = Ff + Gf @ K_hat
    Sh = np.linalg.cholesky(S)
    out["admissibility"] = float(np.min(hf - np.linalg.norm(rows @ Sh, axis=1), initial=np.inf)) if len(hf) else 0.0
    if np.isfinite(rho):
        out["rho"] = float(rho - np.max(np.linalg.eigvals(np.linalg.solve(V_hat, P)).real))
    return out


def solve_terminal_set(
    A,
    B,
    vset: Optional[DisturbanceVertexSet],
    F,
    G,
    h,
    P,
    rho: float,
    tol: float = SDP_TOL,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    (K_hat, V_hat) maximizing log det V_hat^{-1} such that E(V_hat, 1) is robustly invariant under
    u = K_hat x, satisfies F x + G u <= h, and keeps x' P x <= rho.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    n, m = B.shape
    F, G, h = _finite_rows(np.asarray(F, dtype=float), np.asarray(G, dtype=float), np.asarray(h, dtype=float))
    P = np.atleast_2d(np.asarray(P, dtype=float))
    if np.isfinite(rho) and rho <= MIN_EIG * _min_eig(P):
        # S >= MIN_EIG I forces x'Px up to MIN_EIG lambda_min(P) on E(V_hat, 1)
        raise InfeasibleProblem(f"terminal set: rho={rho:.3g} leaves only a point", family="rho")

    S = cp.Variable((n, n), symmetric=True)
    Y = cp.Variable((m, n))
    problem = SdpProblem({"S": S, "Y": Y}, cp.Maximize(cp.log_det(S)), [lmi(S - MIN_EIG * np.eye(n))], name="terminal set", families={"positivity": [0]}, log_det=True)

    invariance = []
    for Aj, Bj in _vertex_dynamics(A, B, vset):
        AS = Aj @ S + Bj @ Y
        invariance.append(lmi(cp.bmat([[S, AS.T], [AS, S]])))
    problem.add_family("invariance", invariance)

    admissibility = []
    for r in range(F.shape[0]):
        row = cp.reshape(F[r] @ S + G[r] @ Y, (1, n), order="F")
        admissibility.append(lmi(cp.bmat([[np.array([[h[r] ** 2]]), row], [row.T, S]])))
    if admissibility:
        problem.add_family("admissibility", admissibility)

    if np.isfinite(rho):
        w, U = np.linalg.eigh(0.5 * (P + P.T))
        Ph = (U * np.sqrt(np.clip(w, 0.0, None))) @ U.T
        problem.add_family("rho", [lmi(rho * np.eye(n) - Ph @ S @ Ph)])
    elif not admissibility:
        # invariance alone is scale free; fix the size and optimize the shape
        problem.add_family("normalization", [cp.trace(S) <= n])

    sol = solve_sdp(problem, tol)
    S_val = 0.5 * (sol["S"] + sol["S"].T)
    K_hat = sol["Y"] @ np.linalg.inv(S_val)
    V_hat = np.linalg.inv(S_val)
    V_hat = 0.5 * (V_hat + V_hat.T)

    slacks = terminal_set_slacks(K_hat, V_hat, A, B, vset, np.asarray(F), np.asarray(G), np.asarray(h), P, rho)
    for what, value in slacks.items():
        _require(value, f"terminal set {what}")
    logger.info("terminal set: log det V_hat^-1 = %.6g, slacks %s", -np.linalg.slogdet(V_hat)[1], {k: f"{v:.2e}" for k, v in slacks.items()})
    return K_hat, V_hat


def sample_invariance(K_hat, V_hat, A, B, vset, n_samples: int = 1000, seed: int = 0) -> float:
    """Worst slack 1 - x+' V_hat x+ over boundary points of E(V_hat, 1) and every vertex."""
    rng = np.random.default_rng(seed)
    ell = Ellipsoid(V_hat, 1.0)
    pts = ell.boundary_samples(n_samples, rng)
    worst = np.inf
    for Aj, Bj in _vertex_dynamics(np.asarray(A), np.asarray(B), vset):
        nxt = pts @ (Aj + Bj @ K_hat).T
        worst = min(worst, float(np.min(1.0 - np.einsum("ij,jk,ik->i", nxt, V_hat, nxt))))
    return worst


# -----------------------
# Per-step tube gains
# -----------------------
def _step_gain(A, B, vset, S_next, F, G, h, tol) -> Tuple[np.ndarray, np.ndarray]:
    n, m = B.shape
    S = cp.Variable((n, n), symmetric=True)
    Y = cp.Variable((m, n))
    problem = SdpProblem({"S": S, "Y": Y}, cp.Maximize(cp.log_det(S)), [lmi(S - MIN_EIG * np.eye(n))], name="tube step", families={"positivity": [0]}, log_det=True)
    containment = []
    for Aj, Bj in _vertex_dynamics(A, B, vset):
        AS = Aj @ S + Bj @ Y
        containment.append(lmi(cp.bmat([[S, AS.T], [AS, S_next]])))
    problem.add_family("containment", containment)
    rows = []
    for r in range(F.shape[0]):
        row = cp.reshape(F[r] @ S + G[r] @ Y, (1, n), order="F")
        rows.append(lmi(cp.bmat([[np.array([[h[r] ** 2]]), row], [row.T, S]])))
    if rows:
        problem.add_family("admissibility", rows)
    else:
        # a singular closed loop leaves S unbounded without rows
        problem.add_family("normalization", [cp.trace(S) <= float(np.trace(S_next))])
    sol = solve_sdp(problem, tol)
    S_val = 0.5 * (sol["S"] + sol["S"].T)
    V = np.linalg.inv(S_val)
    return sol["Y"] @ V, 0.5 * (V + V.T)


def step_containment_slack(K, V, V_next, A, B, vset) -> float:
    """min_j of V - (A_j + B_j K)' V_next (A_j + B_j K), i.e. E(V, 1) maps into E(V_next, 1)."""
    return min(_min_eig(V - (Aj + Bj @ K).T @ V_next @ (Aj + Bj @ K)) for Aj, Bj in _vertex_dynamics(A, B, vset))


def solve_tube_gains(
    models: Sequence[Tuple[np.ndarray, np.ndarray]],
    vertex_sets: Sequence[Optional[DisturbanceVertexSet]],
    V_hat,
    K_hat,
    mode: str,
    F=None,
    G=None,
    h=None,
    tol: float = SDP_TOL,
) -> Tuple[List[np.ndarray], List[np.ndarray], List[int]]:
    """
    Gains K_i and shapes V_i for i = 0..N-1, plus the steps that fell back to (K_hat, V_hat).

    `constant` repeats the terminal pair. `varying` works backward from
    V_N = V_hat, choosing the largest E(V_i, 1) that the closed loop maps into
    E(V_{i+1}, 1) for every vertex; a step whose SDP fails keeps the terminal pair.
    """
    N = len(models)
    if len(vertex_sets) != N:
        raise UsageError(f"{len(vertex_sets)} vertex sets for {N} models")
    V_hat = np.asarray(V_hat, dtype=float)
    K_hat = np.asarray(K_hat, dtype=float)
    if mode == "constant":
        return [K_hat] * N, [V_hat] * N, []
    if mode != "varying":
        raise UsageError(f"unknown tube mode {mode!r}")

    n = V_hat.shape[0]
    m = K_hat.shape[0]
    if F is None:
        F, G, h = np.zeros((0, n)), np.zeros((0, m)), np.zeros(0)
    F, G, h = _finite_rows(np.asarray(F, dtype=float), np.asarray(G, dtype=float), np.asarray(h, dtype=float))

    K_seq: List[np.ndarray] = [K_hat] * N
    V_seq: List[np.ndarray] = [V_hat] * N
    fallbacks = []
    V_next = V_hat
    for i in reversed(range(N)):
        A, B = models[i]
        try:
            K, V = _step_gain(A, B, vertex_sets[i], np.linalg.inv(V_next), F, G, h, tol)
            _require(step_containment_slack(K, V, V_next, A, B, vertex_sets[i]) / max(1.0, np.max(np.abs(V))), f"tube step {i}")
        except (VmpcError, np.linalg.LinAlgError) as e:
            logger.warning("tube step %d: varying cross-section infeasible (%s); using the terminal pair", i, e)
            K, V = K_hat, V_hat
            fallbacks.append(i)
        K_seq[i], V_seq[i] = K, V
        V_next = V
    return K_seq, V_seq, sorted(fallbacks)


# -----------------------
# Pipeline
# -----------------------
def synthesize_terminal(A, B, vset: Optional[DisturbanceVertexSet], Q, R, F, G, h, rho: float, horizon: int, tol: float = SDP_TOL) -> TubePolicy:
    """
    LQR gain -> P for that gain -> (K_hat, V_hat) -> P re-solved for K_hat.

    If the re-solved P breaks the rho cap on E(V_hat, 1), V_hat is scaled up
    (the set shrinks), which keeps invariance and admissibility.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    K_lqr, _ = lqr_gain(A, B, Q, R)
    P0 = solve_terminal_weight(A + B @ K_lqr, K_lqr, vset, Q, R, tol)
    K_hat, V_hat = solve_terminal_set(A, B, vset, F, G, h, P0, rho, tol)
    P = solve_terminal_weight(A + B @ K_hat, K_hat, vset, Q, R, tol)

    scale = 1.0
    if np.isfinite(rho):
        peak = float(np.max(np.linalg.eigvals(np.linalg.solve(V_hat, P)).real))
        if peak > rho:
            scale = peak / rho
            V_hat = scale * V_hat
            logger.info("terminal set rescaled by %.4g to respect rho=%.4g", scale, rho)

    certificate = {
        "terminal_weight_slack": terminal_weight_slack(P, A + B @ K_hat, K_hat, vset, Q, R),
        "invariance_slack": step_containment_slack(K_hat, V_hat, V_hat, A, B, vset),
        "rho_scale": scale,
        "n_vertices": float(vset.n_j if vset is not None else 1),
    }
    policy = TubePolicy(mode="constant", rho=rho, K_hat=K_hat, V_hat=V_hat, P=P, certificate=certificate)
    return policy.constant(horizon)


def verify_policy(policy: TubePolicy, A, B, vset, Q, R) -> dict:
    """Re-check the stored certificate from the matrices alone."""
    slacks = {
        "terminal_weight_slack": terminal_weight_slack(policy.P, A + B @ policy.K_hat, policy.K_hat, vset, Q, R),
        "invariance_slack": step_containment_slack(policy.K_hat, policy.V_hat, policy.V_hat, A, B, vset),
    }
    for what, value in slacks.items():
        _require(value / max(1.0, np.max(np.abs(policy.V_hat)), np.max(np.abs(policy.P))), what)
    return slacks
