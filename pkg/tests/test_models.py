import math

import numpy as np
import pytest

from src.errors import ConfigError, UsageError
from src.models.benchmarks import fpu_state_constraint_rows
from src.models.expressions import build_system, parse_expression
from src.models.systems import eval_force, eval_lagrangian


def test_quadcopter_hover_force(quadcopter):
    sys, _ = quadcopter
    f = eval_force(sys, np.zeros(3), np.zeros(3), np.zeros(2))
    assert np.allclose(f, [0.0, 9.81, 0.0])


def test_quadcopter_problem_data(quadcopter):
    sys, problem = quadcopter
    assert (sys.n_q, sys.n_u, sys.n_x) == (3, 2, 6)
    assert problem.horizon == 21
    assert problem.dt == 0.05
    assert problem.rho == 10.0
    assert np.allclose(np.diag(problem.Q), [0.1, 0.1, 10.0, 1.0, 1.0, 1.0])
    assert np.allclose(np.diag(problem.R), [1e-4, 1e-3])
    # |u1| <= 10, |u2| <= 10
    assert problem.n_c == 4
    assert np.all(problem.h == 10.0)
    assert sys.cyclic == (0, 2)


def test_fpu_lagrangian_matches_formula(fpu):
    sys, _, _ = fpu
    eta = 50.0
    q = np.array([1.0, 1.0 / eta])
    v = np.array([1.0, 1.0])
    expected = 0.5 * (v @ v) - 0.5 * (eta * q[1]) ** 2 - ((q[0] + q[1]) ** 4 + (q[0] - q[1]) ** 4) / 4
    assert eval_lagrangian(sys, q, v) == pytest.approx(expected, rel=1e-12)


def test_fpu_problem_scales_with_micro_steps():
    from src.models.benchmarks import make_fpu

    _, partition, problem = make_fpu(micro_steps=5)
    macro_dt = 5 * 0.01
    assert partition.n_u_macro == 6
    assert np.allclose(problem.Q, macro_dt * np.eye(4))
    assert np.allclose(np.diag(problem.R), [macro_dt] + [0.01] * 5)
    assert problem.rho == 1000.0
    assert np.allclose(problem.x0, [1.0, 0.02, 1.0, 1.0])


def test_fpu_configuration_rows():
    E, h = fpu_state_constraint_rows()
    assert E.shape == (4, 2)
    assert np.allclose(np.abs(E), 1.0 / math.sqrt(2.0))
    assert np.all(h == 10.0)


def test_hessians_of_pendulum(pendulum):
    L_qq, L_qv, L_vv = pendulum.hessians(np.array([0.3]), np.array([0.1]))
    assert L_qq[0, 0] == pytest.approx(-9.81 * math.cos(0.3))
    assert L_qv[0, 0] == pytest.approx(0.0)
    assert L_vv[0, 0] == pytest.approx(1.0)


def test_build_system_from_strings():
    sys = build_system(
        name="spring",
        coordinates=["x"],
        controls=["u"],
        lagrangian="xdot^2/2 - k*x^2/2",
        forces=["u - c*xdot"],
        parameters={"k": 4.0, "c": 0.5},
        separable=True,
    )
    assert eval_lagrangian(sys, [1.0], [2.0]) == pytest.approx(2.0 - 2.0)
    assert np.allclose(eval_force(sys, [0.0], [2.0], [1.0]), [0.0])
    assert sys.equilibrium[0].shape == (1,)


def test_build_system_rejects_unknown_names():
    with pytest.raises(ConfigError):
        build_system("bad", ["x"], ["u"], "xdot^2/2 + y", ["u"])


def test_build_system_rejects_control_in_lagrangian():
    with pytest.raises(ConfigError):
        build_system("bad", ["x"], ["u"], "xdot^2/2 + u*x", ["u"])


def test_parse_expression_reports_syntax_errors():
    with pytest.raises(ConfigError):
        parse_expression("x +* 2", {})


def test_wrong_state_length_is_a_usage_error(quadcopter):
    sys, _ = quadcopter
    with pytest.raises(UsageError):
        sys.force(np.zeros(2), np.zeros(3), np.zeros(2))
