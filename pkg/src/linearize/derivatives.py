"""
Differentiation strategies.

A strategy turns a model (anything exposing grad_q, grad_v, force, and for
the symbolic strategy hessians/force_jacobians) into the local derivative
data used by the interval Jacobian blocks. The symbolic strategy evaluates
the sympy-compiled exact derivatives; the finite-difference strategy
differentiates the gradients and forces numerically and is used as the
accuracy oracle.
"""

from dataclasses import dataclass
from typing import Protocol

import numpy as np


@dataclass(frozen=True)
class LocalDerivatives:
    L_q: np.ndarray
    L_v: np.ndarray
    L_qq: np.ndarray
    L_qv: np.ndarray
    L_vv: np.ndarray
    f: np.ndarray
    f_q: np.ndarray
    f_v: np.ndarray
    f_u: np.ndarray


class DifferentiationStrategy(Protocol):
    def evaluate(self, model, q, v, u) -> LocalDerivatives: ...


class SymbolicDifferentiation:
    name = "symbolic"

    def evaluate(self, model, q, v, u) -> LocalDerivatives:
        L_qq, L_qv, L_vv = model.hessians(q, v)
        f_q, f_v, f_u = model.force_jacobians(q, v, u)
        return LocalDerivatives(
            L_q=model.grad_q(q, v),
            L_v=model.grad_v(q, v),
            L_qq=L_qq,
            L_qv=L_qv,
            L_vv=L_vv,
            f=model.force(q, v, u),
            f_q=f_q,
            f_v=f_v,
            f_u=f_u,
        )


def _central(fn, x: np.ndarray, rel_step: float) -> np.ndarray:
    """Jacobian of fn at x by central differences, column k for x_k."""
    x = np.asarray(x, dtype=float)
    f0 = np.asarray(fn(x), dtype=float)
    J = np.zeros((f0.shape[0], x.shape[0]))
    for k in range(x.shape[0]):
        h = rel_step * max(1.0, abs(x[k]))
        xp, xm = x.copy(), x.copy()
        xp[k] += h
        xm[k] -= h
        J[:, k] = (np.asarray(fn(xp)) - np.asarray(fn(xm))) / (2.0 * h)
    return J


@dataclass(frozen=True)
class FiniteDifferenceDifferentiation:
    rel_step: float = 1e-6
    name: str = "finite-difference"

    def evaluate(self, model, q, v, u) -> LocalDerivatives:
        q = np.asarray(q, dtype=float)
        v = np.asarray(v, dtype=float)
        u = np.asarray(u, dtype=float)
        return LocalDerivatives(
            L_q=model.grad_q(q, v),
            L_v=model.grad_v(q, v),
            L_qq=_central(lambda x: model.grad_q(x, v), q, self.rel_step),
            L_qv=_central(lambda x: model.grad_q(q, x), v, self.rel_step),
            L_vv=_central(lambda x: model.grad_v(q, x), v, self.rel_step),
            f=model.force(q, v, u),
            f_q=_central(lambda x: model.force(x, v, u), q, self.rel_step),
            f_v=_central(lambda x: model.force(q, x, u), v, self.rel_step),
            f_u=_central(lambda x: model.force(q, v, x), u, self.rel_step) if u.size else np.zeros((q.size, 0)),
        )


DEFAULT_STRATEGY = SymbolicDifferentiation()


def get_strategy(name: str) -> DifferentiationStrategy:
    if name == "symbolic":
        return SymbolicDifferentiation()
    if name in ("finite-difference", "fd"):
        return FiniteDifferenceDifferentiation()
    raise ValueError(f"unknown differentiation strategy {name!r}")
