import cvxpy as cp
import numpy as np
import pytest

from src.conic.backend import CvxpyBackend, solve_sdp, solve_socp
from src.conic.problems import SdpProblem, SocpProblem, lmi
from src.conic.standard_form import dump_problem, load_problem, replay, to_standard_form
from src.errors import InfeasibleProblem, UsageError


def _eigen_problem(A: np.ndarray) -> SdpProblem:
    t = cp.Variable(name="t")
    n = A.shape[0]
    return SdpProblem(variables={"t": t}, objective=cp.Minimize(t), constraints=[lmi(t * np.eye(n) - A)], name="lambda-max")


def _distance_problem(a: np.ndarray) -> SocpProblem:
    x = cp.Variable(a.shape[0], name="x")
    t = cp.Variable(name="t")
    constraints = [cp.SOC(t, x - a), cp.sum(x) == 0.0]
    return SocpProblem(variables={"x": x, "t": t}, objective=cp.Minimize(t), constraints=constraints, name="distance")


def test_sdp_recovers_largest_eigenvalue(rng):
    M = rng.standard_normal((4, 4))
    A = M + M.T
    sol = solve_sdp(_eigen_problem(A))
    assert float(sol["t"]) == pytest.approx(np.linalg.eigvalsh(A).max(), abs=1e-6)


def test_socp_distance_to_hyperplane():
    a = np.array([1.0, 2.0, 3.0])
    sol = solve_socp(_distance_problem(a))
    # distance from a to {sum x = 0} is |sum a| / sqrt(n)
    assert sol.value == pytest.approx(6.0 / np.sqrt(3.0), rel=1e-6)
    assert sol.max_violation <= 1e-7


def test_infeasible_problem_names_a_family():
    x = cp.Variable(name="x")
    problem = SocpProblem(variables={"x": x}, objective=cp.Minimize(x), constraints=[], name="empty-box")
    problem.add_family("lower", [x >= 1.0])
    problem.add_family("upper", [x <= 0.0])
    with pytest.raises(InfeasibleProblem) as info:
        solve_socp(problem)
    assert info.value.family in ("lower", "upper")


def test_socp_rejects_semidefinite_blocks():
    X = cp.Variable((2, 2), symmetric=True)
    with pytest.raises(UsageError):
        SocpProblem(variables={"X": X}, objective=cp.Minimize(cp.trace(X)), constraints=[X >> 0])


def test_non_convex_problems_are_rejected():
    x = cp.Variable()
    with pytest.raises(UsageError):
        SocpProblem(variables={"x": x}, objective=cp.Minimize(-cp.square(x)), constraints=[])


def test_socp_export_replays_to_the_same_optimum(tmp_path):
    problem = _distance_problem(np.array([0.5, -2.0, 4.0]))
    sol = solve_socp(problem)
    path = dump_problem(problem, tmp_path / "socp.json", objective_value=sol.value)
    record = load_problem(path)
    assert record.kind == "socp"
    assert record.cones.psd == []
    replayed = replay(record)
    assert replayed.value == pytest.approx(sol.value, rel=1e-6)


def test_sdp_export_replays_to_the_same_optimum(rng):
    M = rng.standard_normal((3, 3))
    problem = _eigen_problem(M + M.T)
    sol = solve_sdp(problem)
    record = to_standard_form(problem, sol.value)
    assert record.cones.psd == [3]
    assert replay(record).value == pytest.approx(sol.value, abs=1e-6)


def test_secondary_solver_agrees_with_primary():
    problem = _distance_problem(np.array([1.0, -1.0, 2.0]))
    primary = CvxpyBackend(primary="CLARABEL", secondary=None).solve(problem, 1e-8)
    secondary = CvxpyBackend(primary="SCS", secondary=None).solve(_distance_problem(np.array([1.0, -1.0, 2.0])), 1e-8)
    assert secondary.value == pytest.approx(primary.value, rel=1e-5)
