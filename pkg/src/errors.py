"""Exception hierarchy shared by every package."""

from typing import Optional


class VmpcError(Exception):
    """Base class for all library errors."""


class UsageError(VmpcError, ValueError):
    pass


class ConfigError(VmpcError):
    pass


class StepFailure(VmpcError):
    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(f"{message} (residual={residual:.3e}, iterations={iterations})")
        self.residual = residual
        self.iterations = iterations


class LinearizationError(VmpcError):
    def __init__(self, message: str, condition: Optional[float] = None, step: Optional[int] = None):
        details = []
        if condition is not None:
            details.append(f"cond={condition:.3e}")
        if step is not None:
            details.append(f"step={step}")
        suffix = f" ({', '.join(details)})" if details else ""
        super().__init__(message + suffix)
        self.condition = condition
        self.step = step


class BoundError(VmpcError):
    def __init__(self, message: str, term: str):
        super().__init__(f"{message}: {term}")
        self.term = term


class InfeasibleProblem(VmpcError):
    def __init__(self, message: str, family: Optional[str] = None):
        super().__init__(message if family is None else f"{message} [binding: {family}]")
        self.family = family


class SolverLimit(VmpcError):
    pass


class VerificationError(VmpcError):
    pass


class RecursiveFeasibilityError(VmpcError):
    def __init__(self, step: int):
        super().__init__(f"RHOCP infeasible at control step {step} after a feasible start")
        self.step = step
