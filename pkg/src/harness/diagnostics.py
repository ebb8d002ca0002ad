from typing import Dict, Optional, Sequence
import logging

import numpy as np

from src.errors import UsageError
from src.integrators.simulate import Trajectory
from src.integrators.single_rate import inverse_legendre
from src.models.systems import LagrangianSystem
from src.records import DiagnosticsRecord

logger = logging.getLogger(__name__)


def compute_noether_maps(trajectory: Trajectory, cyclic: Sequence[int], forces: Optional[np.ndarray] = None) -> Dict[int, np.ndarray]:
    """Psi_c,i = p_i^c - p_0^c - dt sum_{n<i} f_n^c for every cyclic coordinate c."""
    if not cyclic:
        return {}
    forces = np.asarray(trajectory.forces if forces is None else forces, dtype=float).reshape(-1, trajectory.n_q)
    if forces.shape[0] != trajectory.steps:
        raise UsageError(f"{forces.shape[0]} force rows for {trajectory.steps} steps")
    p = trajectory.p
    impulse = np.vstack([np.zeros((1, trajectory.n_q)), trajectory.dt * np.cumsum(forces, axis=0)])
    traces = {}
    for c in cyclic:
        if not 0 <= c < trajectory.n_q:
            raise UsageError(f"cyclic index {c} out of range for {trajectory.n_q} coordinates")
        traces[c] = p[:, c] - p[0, c] - impulse[:, c]
    return traces


def compute_energy(sys: LagrangianSystem, trajectory: Trajectory) -> np.ndarray:
    """E_i = <p_i, v_i> - L(q_i, v_i) with v_i from the inverse Legendre map."""
    energy = []
    for q, p in zip(trajectory.q, trajectory.p):
        v = inverse_legendre(sys, q, p)
        energy.append(float(p @ v - sys.lagrangian(q, v)))
    return np.asarray(energy)


def max_deviation(trace: np.ndarray) -> float:
    trace = np.asarray(trace, dtype=float)
    return float(np.max(np.abs(trace - trace[0]))) if trace.size else 0.0


def diagnose(
    sys: LagrangianSystem,
    trajectory: Trajectory,
    containment_slacks: Sequence[float] = (),
    max_residual: Optional[float] = None,
    extra: Optional[Dict[str, float]] = None,
) -> DiagnosticsRecord:
    energy = compute_energy(sys, trajectory)
    names = [str(s) for s in sys.q]
    noether = {names[c]: trace.tolist() for c, trace in compute_noether_maps(trajectory, sys.cyclic).items()}
    extra = dict(extra or {})
    extra["energy_max_deviation"] = max_deviation(energy)
    for name, trace in noether.items():
        extra[f"noether_max_{name}"] = float(np.max(np.abs(trace)))
    logger.debug("diagnostics for %s: %s", sys.name, extra)
    return DiagnosticsRecord(
        energy=energy.tolist(),
        noether=noether,
        max_residual=max_residual,
        containment_slacks=list(containment_slacks),
        extra=extra,
    )
