from dataclasses import dataclass

import numpy as np

from src.errors import UsageError


@dataclass(frozen=True)
class QuadratureRule:
    """Interior evaluation point q_bar = b q_i + c q_{i+1} on a step of length dt."""

    dt: float
    b: float = 0.5
    c: float = 0.5

    def __post_init__(self):
        if not self.dt > 0.0:
            raise UsageError(f"dt must be positive, got {self.dt}")
        if abs(self.b + self.c - 1.0) > 1e-12:
            raise UsageError(f"quadrature weights must satisfy b + c = 1, got b={self.b}, c={self.c}")

    def midpoint(self, q0, q1) -> np.ndarray:
        return self.b * np.asarray(q0, dtype=float) + self.c * np.asarray(q1, dtype=float)

    def velocity(self, q0, q1) -> np.ndarray:
        return (np.asarray(q1, dtype=float) - np.asarray(q0, dtype=float)) / self.dt

    def with_dt(self, dt: float) -> "QuadratureRule":
        return QuadratureRule(dt=dt, b=self.b, c=self.c)
