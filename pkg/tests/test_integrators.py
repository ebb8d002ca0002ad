import numpy as np
import pytest

from src.errors import StepFailure, UsageError
from src.harness.diagnostics import compute_energy
from src.integrators.multirate import MacroState, recover_micro_nodes, step_multirate, step_multirate_macro
from src.integrators.newton import solve_newton
from src.integrators.quadrature import QuadratureRule
from src.integrators.simulate import (
    simulate,
    simulate_forward_euler,
    simulate_multirate,
    simulate_successive_linearization,
)
from src.integrators.single_rate import DiscreteState, discrete_lagrangian_and_forces, step_residual, step_single_rate
from src.models.benchmarks import make_fpu


def test_quadrature_weights_must_sum_to_one():
    with pytest.raises(UsageError):
        QuadratureRule(0.1, b=0.3, c=0.3)
    with pytest.raises(UsageError):
        QuadratureRule(0.0)


def test_discrete_forces_at_hover(quadcopter, rule):
    sys, _ = quadcopter
    _, f_minus, f_plus = discrete_lagrangian_and_forces(sys, rule, np.zeros(3), np.zeros(3), np.zeros(2))
    expected = 0.5 * rule.dt * np.array([0.0, 9.81, 0.0])
    assert np.allclose(f_minus, expected)
    assert np.allclose(f_plus, expected)


def test_oscillator_matches_closed_form_midpoint(oscillator):
    dt = 0.1
    rule = QuadratureRule(dt)
    state = step_single_rate(oscillator, rule, DiscreteState(q=[1.0], p=[0.0]), [0.0])

    q0, p0 = 1.0, 0.0
    a = dt * dt / 4.0
    q1 = ((1.0 - a) * q0 + dt * p0) / (1.0 + a)
    p1 = (q1 - q0) / dt - dt / 4.0 * (q0 + q1)
    assert state.q[0] == pytest.approx(q1, abs=1e-12)
    assert state.p[0] == pytest.approx(p1, abs=1e-12)


def test_accepted_step_residual_is_small(quadcopter, rule):
    sys, _ = quadcopter
    s0 = DiscreteState(q=[0.0, -1.0, -1.0], p=[0.0, 0.0, 0.0])
    u = np.array([1.0, -0.5])
    s1 = step_single_rate(sys, rule, s0, u)
    assert np.max(np.abs(step_residual(sys, rule, s0, s1, u))) <= 1e-10


def test_hover_is_an_equilibrium(quadcopter, rule):
    sys, _ = quadcopter
    traj = simulate(sys, rule, np.zeros(6), np.zeros((10, 2)), 10)
    assert traj.failure is None
    assert np.allclose(traj.x, 0.0, atol=1e-12)


def test_variational_energy_stays_bounded_while_euler_drifts(oscillator):
    rule = QuadratureRule(0.1)
    steps = 500
    controls = np.zeros((steps, 1))
    vi = simulate(oscillator, rule, [1.0, 0.0], controls, steps)
    euler = simulate_forward_euler(oscillator, 0.1, [1.0, 0.0], controls, steps)
    e_vi = compute_energy(oscillator, vi)
    e_euler = compute_energy(oscillator, euler)
    assert np.max(np.abs(e_vi - e_vi[0])) < 1e-2
    assert np.max(np.abs(e_euler - e_euler[0])) > 1.0


def test_successive_linearization_is_exact_for_quadratic_systems(oscillator):
    rule = QuadratureRule(0.1)
    controls = np.full((20, 1), 0.3)
    exact = simulate(oscillator, rule, [1.0, 0.0], controls, 20)
    surrogate = simulate_successive_linearization(oscillator, rule, [1.0, 0.0], controls, 20)
    assert np.allclose(exact.x, surrogate.x, atol=1e-9)


def test_controls_must_cover_every_step(oscillator):
    with pytest.raises(UsageError):
        simulate(oscillator, QuadratureRule(0.1), [1.0, 0.0], np.zeros((3, 1)), 5)


def test_newton_reports_exhaustion():
    with pytest.raises(StepFailure) as info:
        solve_newton(lambda x: x**2 + 1.0, lambda x: np.diag(2.0 * x + 1e-3), np.array([1.0]), max_iter=5)
    assert info.value.residual > 0.0


def test_single_micro_step_reduces_to_single_rate():
    sys, partition, problem = make_fpu(micro_steps=1)
    rule = QuadratureRule(0.01)
    x0 = problem.x0
    u = np.array([0.5, -0.2])
    nxt, _ = step_multirate_macro(sys, partition, rule, MacroState.from_vector(x0, partition), u)
    single = step_single_rate(sys, rule, DiscreteState.from_vector(partition.single_rate_state(x0), 2), u)
    assert np.allclose(partition.single_rate_state(nxt.x), single.x, atol=1e-9)


def test_micro_nodes_are_recoverable(fpu3):
    sys, partition, problem = fpu3
    rule = QuadratureRule(0.01)
    state = MacroState.from_vector(problem.x0, partition)
    u = np.array([0.0, 0.1, 0.2, 0.3])
    nxt, micro = step_multirate_macro(sys, partition, rule, state, u)
    recovered = recover_micro_nodes(sys, partition, rule, state, nxt, [[0.1], [0.2], [0.3]], u_s=[0.0])
    assert np.allclose(recovered.q_f, micro.q_f, atol=1e-8)
    assert np.allclose(recovered.p_f, micro.p_f, atol=1e-8)
    assert np.allclose(recovered.u_f.reshape(-1), [0.1, 0.2, 0.3])


def test_micro_recovery_needs_one_fast_input_per_interval(fpu3):
    sys, partition, problem = fpu3
    rule = QuadratureRule(0.01)
    state = MacroState.from_vector(problem.x0, partition)
    nxt, _ = step_multirate_macro(sys, partition, rule, state, np.zeros(4))
    with pytest.raises(UsageError):
        recover_micro_nodes(sys, partition, rule, state, nxt, [[0.0], [0.0]])


def test_step_multirate_checks_fast_control_count(fpu3):
    sys, partition, problem = fpu3
    state = MacroState.from_vector(problem.x0, partition)
    with pytest.raises(UsageError):
        step_multirate(sys, partition, QuadratureRule(0.01), state, [0.0], [[0.0], [0.0]])


def test_multirate_table_has_one_row_per_micro_node(fpu3):
    sys, partition, problem = fpu3
    traj = simulate_multirate(sys, partition, QuadratureRule(0.01), problem.x0, np.zeros((4, 4)), 4)
    assert traj.failure is None
    table = traj.table()
    assert table.shape == (4 * 3 + 1, 1 + 4 + 2)
    assert np.allclose(np.diff(table[:, 0]), 0.01)


FPU_DT = 1e-3


def _fpu_energy_traces(fpu, steps):
    sys, _, problem = fpu
    controls = np.zeros((steps, sys.n_u))
    vi = simulate(sys, QuadratureRule(FPU_DT), problem.x0, controls, steps)
    sl = simulate_successive_linearization(sys, QuadratureRule(FPU_DT), problem.x0, controls, steps)
    euler = simulate_forward_euler(sys, FPU_DT, problem.x0, controls, steps)
    assert vi.failure is None and sl.failure is None
    return compute_energy(sys, vi), compute_energy(sys, sl), compute_energy(sys, euler)


def test_fpu_variational_energy_beats_forward_euler(fpu):
    e_vi, e_sl, e_euler = _fpu_energy_traces(fpu, 2000)
    euler_dev = np.max(np.abs(e_euler - e_euler[0]))
    assert np.max(np.abs(e_vi - e_vi[0])) < euler_dev
    assert np.max(np.abs(e_sl - e_sl[0])) < euler_dev
    # explicit Euler gains energy on the stiff spring
    assert e_euler[-1] > e_euler[0]


@pytest.mark.slow
def test_fpu_variational_energy_has_no_drift_over_ten_thousand_steps(fpu):
    sys, _, problem = fpu
    steps = 10_000
    traj = simulate(sys, QuadratureRule(FPU_DT), problem.x0, np.zeros((steps, sys.n_u)), steps)
    assert traj.failure is None
    energy = compute_energy(sys, traj)
    error = np.abs(energy - energy[0])
    quarter = steps // 4
    # the error keeps oscillating at its early amplitude instead of accumulating
    assert np.max(error) <= 3.0 * np.max(error[: quarter + 1])
    assert np.max(error) < 1e-2 * abs(energy[0])
