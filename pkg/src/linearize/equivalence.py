from dataclasses import dataclass
import logging

import numpy as np

from src.errors import UsageError
from src.linearize.models import LinearModel

logger = logging.getLogger(__name__)

ANCHOR_MATCH_TOL = 1e-9


@dataclass(frozen=True)
class EquivalenceReport:
    max_abs_diff: float
    per_block: dict
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_abs_diff <= self.tol


def _max_diff(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.max(np.abs(a - b), initial=0.0))


def check_equivalence(m1: LinearModel, m2: LinearModel, tol: float = 1e-8) -> EquivalenceReport:
    """
    Largest elementwise difference between the (M, D, J) triples of two models.

    Both models must be built around the same anchor states and control; the
    approximation points are allowed to differ, which shows up as a failing
    report rather than an error.
    """
    if m1.M.shape != m2.M.shape or m1.J.shape != m2.J.shape:
        raise UsageError(f"model dimensions differ: {m1.M.shape}/{m1.J.shape} vs {m2.M.shape}/{m2.J.shape}")
    for what, a, b in (
        ("x_anchor", m1.x_anchor, m2.x_anchor),
        ("x_next_anchor", m1.x_next_anchor, m2.x_next_anchor),
        ("u_anchor", m1.u_anchor, m2.u_anchor),
    ):
        if _max_diff(a, b) > ANCHOR_MATCH_TOL * (1.0 + np.max(np.abs(a), initial=0.0)):
            raise UsageError(f"models are anchored differently ({what})")

    per_block = {name: _max_diff(getattr(m1, name), getattr(m2, name)) for name in ("M", "D", "J")}
    report = EquivalenceReport(max_abs_diff=max(per_block.values()), per_block=per_block, tol=tol)
    logger.info("equivalence %s vs %s: max |diff| %.3e (%s)", m1.method, m2.method, report.max_abs_diff, "pass" if report.passed else "fail")
    return report
