from dataclasses import dataclass
from functools import cached_property
from typing import List, Sequence

import numpy as np

from src.errors import UsageError


def _sym_sqrt_pair(V: np.ndarray):
    """(V^{1/2}, V^{-1/2}) from the eigendecomposition of a symmetric PD matrix."""
    w, U = np.linalg.eigh(V)
    return (U * np.sqrt(w)) @ U.T, (U / np.sqrt(w)) @ U.T


def psd_sqrt(M: np.ndarray) -> np.ndarray:
    """Symmetric square root of a positive semidefinite matrix; tiny negative eigenvalues are clipped."""
    w, U = np.linalg.eigh(0.5 * (M + M.T))
    return (U * np.sqrt(np.clip(w, 0.0, None))) @ U.T


def check_pd(V: np.ndarray, what: str = "V", tol: float = 0.0) -> np.ndarray:
    V = np.atleast_2d(np.asarray(V, dtype=float))
    if V.shape[0] != V.shape[1]:
        raise UsageError(f"{what} must be square, got {V.shape}")
    if not np.allclose(V, V.T, atol=1e-10 * (1.0 + np.max(np.abs(V), initial=0.0))):
        raise UsageError(f"{what} must be symmetric")
    V = 0.5 * (V + V.T)
    lam = np.linalg.eigvalsh(V)
    if lam.size and lam[0] <= tol:
        raise UsageError(f"{what} must be positive definite (smallest eigenvalue {lam[0]:.3e})")
    return V


@dataclass(frozen=True)
class Ellipsoid:
    """{y : y' V y <= beta^2}."""

    V: np.ndarray
    beta: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "V", check_pd(self.V))
        if self.beta < 0:
            raise UsageError(f"beta must be non-negative, got {self.beta}")

    @cached_property
    def _roots(self):
        return _sym_sqrt_pair(self.V)

    @property
    def sqrt(self) -> np.ndarray:
        return self._roots[0]

    @property
    def inv_sqrt(self) -> np.ndarray:
        return self._roots[1]

    def value(self, y) -> float:
        y = np.asarray(y, dtype=float)
        return float(y @ self.V @ y)

    def slack(self, y) -> float:
        return self.beta**2 - self.value(y)

    def contains(self, y, tol: float = 1e-9) -> bool:
        return self.slack(y) >= -tol * max(1.0, self.beta**2)

    def boundary_samples(self, n: int, rng) -> np.ndarray:
        """n points drawn uniformly in direction on the boundary."""
        d = rng.standard_normal((n, self.V.shape[0]))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        return self.beta * d @ self.inv_sqrt


def ellipsoid_support(ell: Ellipsoid, W) -> float:
    """sup ||W e|| over e' V e <= beta^2; a 1-D W is treated as a row."""
    W = np.asarray(W, dtype=float)
    if ell.beta == 0.0:
        return 0.0
    if W.ndim == 1:
        return float(ell.beta * np.linalg.norm(ell.inv_sqrt @ W))
    return float(ell.beta * np.linalg.norm(W @ ell.inv_sqrt, 2))


@dataclass(frozen=True)
class ContainmentReport:
    inside: List[bool]
    slacks: List[float]

    @property
    def worst_slack(self) -> float:
        return min(self.slacks) if self.slacks else 0.0

    @property
    def passed(self) -> bool:
        return all(self.inside)


def check_containment(errors: Sequence, shapes: Sequence, radii: Sequence[float], tol: float = 1e-9) -> ContainmentReport:
    """Per-step membership of e_i in E(V_i, beta_i^2); the slack is beta_i^2 - e_i' V_i e_i."""
    if not (len(errors) == len(shapes) == len(radii)):
        raise UsageError(f"lengths differ: {len(errors)} errors, {len(shapes)} shapes, {len(radii)} radii")
    inside, slacks = [], []
    for e, V, beta in zip(errors, shapes, radii):
        ell = Ellipsoid(V, float(beta))
        s = ell.slack(e)
        slacks.append(s)
        inside.append(s >= -tol * max(1.0, ell.beta**2))
    return ContainmentReport(inside=inside, slacks=slacks)
