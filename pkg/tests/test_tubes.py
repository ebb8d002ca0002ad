import numpy as np
import pytest

from src.errors import InfeasibleProblem, UsageError
from src.linearize.models import DisturbanceVertexSet
from src.models.systems import Region
from src.tubes.ellipsoid import Ellipsoid, check_containment, ellipsoid_support, psd_sqrt
from src.tubes.policy import TubePolicy
from src.tubes.synthesis import (
    lqr_gain,
    sample_invariance,
    solve_terminal_set,
    solve_terminal_weight,
    solve_tube_gains,
    step_containment_slack,
    synthesize_terminal,
    verify_policy,
)

DT = 0.1
A_DI = np.array([[1.0, DT], [0.0, 1.0]])
B_DI = np.array([[0.5 * DT * DT], [DT]])


def test_support_of_unit_ball():
    assert ellipsoid_support(Ellipsoid(np.eye(2), 1.0), np.eye(2)) == pytest.approx(1.0)


def test_support_of_scaled_ball_along_a_row():
    assert ellipsoid_support(Ellipsoid(4.0 * np.eye(2), 2.0), np.array([1.0, 0.0])) == pytest.approx(1.0)


def test_support_of_degenerate_ellipsoid_is_zero():
    assert ellipsoid_support(Ellipsoid(np.eye(3), 0.0), np.ones((2, 3))) == 0.0


def test_non_positive_definite_shape_is_rejected():
    with pytest.raises(UsageError):
        Ellipsoid(np.diag([1.0, 0.0]))
    with pytest.raises(UsageError):
        Ellipsoid(np.array([[1.0, 2.0], [0.0, 1.0]]))


def test_containment_of_zero_and_boundary_errors():
    V = np.diag([1.0, 4.0])
    report = check_containment([np.zeros(2), np.array([0.0, 0.5])], [V, V], [1.0, 1.0])
    assert report.passed
    assert report.slacks[1] == pytest.approx(0.0, abs=1e-12)
    assert report.worst_slack == pytest.approx(0.0, abs=1e-12)
    outside = check_containment([np.array([2.0, 0.0])], [V], [1.0])
    assert not outside.passed


def test_psd_sqrt_squares_back(rng):
    M = rng.standard_normal((3, 3))
    S = M @ M.T
    R = psd_sqrt(S)
    assert np.allclose(R @ R, S, atol=1e-10)


def test_scalar_terminal_weight_is_the_lyapunov_value():
    P = solve_terminal_weight(np.array([[0.5]]), np.zeros((1, 1)), None, np.eye(1), np.eye(1))
    assert P[0, 0] == pytest.approx(4.0 / 3.0, abs=1e-6)


def test_matrix_terminal_weight_matches_lyapunov_iteration():
    Phi = np.array([[0.6, 0.2], [-0.1, 0.5]])
    Q = np.diag([1.0, 2.0])
    P = solve_terminal_weight(Phi, np.zeros((1, 2)), None, Q, np.eye(1))
    X = np.zeros((2, 2))
    for _ in range(2000):
        X = Phi.T @ X @ Phi + Q
    assert np.allclose(P, X, atol=1e-6)


def test_unstable_closed_loop_has_no_terminal_weight():
    with pytest.raises(InfeasibleProblem):
        solve_terminal_weight(np.array([[1.5]]), np.zeros((1, 1)), None, np.eye(1), np.eye(1))


def test_terminal_set_is_invariant_under_lqr_like_gain():
    K, X = lqr_gain(A_DI, B_DI, np.eye(2), np.eye(1))
    F, G, h = np.zeros((0, 2)), np.zeros((0, 1)), np.zeros(0)
    K_hat, V_hat = solve_terminal_set(A_DI, B_DI, None, F, G, h, X, np.inf)
    assert sample_invariance(K_hat, V_hat, A_DI, B_DI, None, n_samples=1000) >= -1e-6


def test_synthesized_policy_carries_a_valid_certificate():
    F = np.zeros((2, 2))
    G = np.array([[1.0], [-1.0]])
    h = np.ones(2)
    policy = synthesize_terminal(A_DI, B_DI, None, np.eye(2), np.eye(1), F, G, h, rho=10.0, horizon=5)
    assert policy.mode == "constant"
    assert policy.horizon == 5
    assert all(np.array_equal(K, policy.K_hat) for K in policy.K_seq)
    slacks = verify_policy(policy, A_DI, B_DI, None, np.eye(2), np.eye(1))
    assert slacks["invariance_slack"] >= -1e-7
    # the input bound holds on the whole terminal set
    assert ellipsoid_support(Ellipsoid(policy.V_hat, 1.0), policy.K_hat[0]) <= 1.0 + 1e-6


def test_constant_mode_repeats_the_terminal_pair():
    K_hat = np.array([[-1.0, -2.0]])
    V_hat = np.eye(2)
    K_seq, V_seq, fallbacks = solve_tube_gains([(A_DI, B_DI)] * 3, [None] * 3, V_hat, K_hat, "constant")
    assert len(K_seq) == 3
    assert all(K is K_hat or np.array_equal(K, K_hat) for K in K_seq)
    assert all(np.array_equal(V, V_hat) for V in V_seq)
    assert fallbacks == []


def test_varying_mode_chains_containment_backwards():
    K, X = lqr_gain(A_DI, B_DI, np.eye(2), np.eye(1))
    K_hat, V_hat = solve_terminal_set(A_DI, B_DI, None, np.zeros((0, 2)), np.zeros((0, 1)), np.zeros(0), X, np.inf)
    K_seq, V_seq, fallbacks = solve_tube_gains([(A_DI, B_DI)] * 4, [None] * 4, V_hat, K_hat, "varying")
    assert fallbacks == []
    shapes = [*V_seq, V_hat]
    for i in range(4):
        scale = max(1.0, np.max(np.abs(shapes[i])))
        assert step_containment_slack(K_seq[i], shapes[i], shapes[i + 1], A_DI, B_DI, None) / scale >= -1e-6


def test_unknown_tube_mode_is_rejected():
    with pytest.raises(UsageError):
        solve_tube_gains([(A_DI, B_DI)], [None], np.eye(2), np.zeros((1, 2)), "adaptive")


def test_policy_file_restores_the_matrices(tmp_path):
    policy = TubePolicy(mode="constant", rho=np.inf, K_hat=np.array([[1.0, 2.0]]), V_hat=np.eye(2), P=np.eye(2)).constant(2)
    loaded = TubePolicy.load(policy.save(tmp_path / "policy.json"))
    assert loaded.horizon == 2
    assert np.isinf(loaded.rho)
    assert np.allclose(loaded.K_hat, policy.K_hat)


def _box_rows():
    F = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0], [0.0, 0.0], [0.0, 0.0]])
    G = np.array([[0.0], [0.0], [0.0], [0.0], [1.0], [-1.0]])
    h = np.array([3.0, 3.0, 2.0, 2.0, 1.0, 1.0])
    return F, G, h


def test_varying_gains_recover_the_feedback_from_the_change_of_variables():
    F, G, h = _box_rows()
    V_hat = np.diag([4.0, 1.0])
    K_hat = np.array([[-1.0, -1.5]])
    K_seq, V_seq, fallbacks = solve_tube_gains([(A_DI, B_DI)] * 3, [None] * 3, V_hat, K_hat, "varying", F, G, h)
    assert fallbacks == []
    shapes = [*V_seq, V_hat]
    for i in range(3):
        assert not np.allclose(V_seq[i], V_hat)
        assert step_containment_slack(K_seq[i], shapes[i], shapes[i + 1], A_DI, B_DI, None) >= -1e-7
        # every row of F x + G K x stays admissible on E(V_i, 1)
        ell = Ellipsoid(V_seq[i], 1.0)
        for r in range(F.shape[0]):
            assert ellipsoid_support(ell, F[r] + G[r] @ K_seq[i]) <= h[r] + 1e-6


@pytest.mark.parametrize("rho", [0.0, 1e-14])
def test_vanishing_rho_leaves_no_terminal_set(rho):
    _, X = lqr_gain(A_DI, B_DI, np.eye(2), np.eye(1))
    F, G, h = _box_rows()
    with pytest.raises(InfeasibleProblem) as err:
        solve_terminal_set(A_DI, B_DI, None, F, G, h, X, rho)
    assert err.value.family == "rho"


def test_terminal_weight_trace_grows_with_the_vertex_set():
    Phi = np.array([[0.6, 0.2], [-0.1, 0.5]])
    K = np.zeros((1, 2))
    Q = np.eye(2)
    traces = []
    for eps in (0.0, 0.05, 0.1):
        vset = DisturbanceVertexSet(
            vertices=((eps * np.eye(2), np.zeros((2, 1))), (-eps * np.eye(2), np.zeros((2, 1)))),
            region=Region(np.ones(1), np.ones(1), np.ones(1)),
        )
        traces.append(np.trace(solve_terminal_weight(Phi, K, vset, Q, np.eye(1))))
    assert traces[0] <= traces[1] + 1e-6
    assert traces[1] <= traces[2] + 1e-6
    assert traces[2] > traces[0]
