import numpy as np
import pytest

from src.errors import BoundError, LinearizationError, UsageError
from src.integrators.multirate import MacroState, step_multirate_macro
from src.integrators.quadrature import QuadratureRule
from src.integrators.single_rate import DiscreteState, step_single_rate
from src.linearize.bounds import (
    check_multirate_soundness,
    check_soundness,
    combine_multirate_vertices,
    error_vertex_set,
    hull_slack,
    multirate_component_sets,
    multirate_error_vertex_set,
    remainder_channels,
    trust_maps,
)
from src.linearize.equivalence import check_equivalence
from src.linearize.jacobian import finite_difference_linearize, jacobian_linearize, linearize_multirate, multirate_anchor
from src.linearize.micro import micro_eliminate
from src.linearize.models import ApproximationPoint, LinearModel
from src.linearize.variational import variational_linearize
from src.models.benchmarks import make_fpu, make_quadcopter
from src.models.systems import Region
from src.rhocp.plants import MultiratePlant, SingleRatePlant


@pytest.fixture
def quad_anchor(quadcopter, rule):
    sys, _ = quadcopter
    x_i = np.array([0.1, -0.5, 0.2, 0.3, -0.1, 0.05])
    u = np.array([0.5, -0.3])
    nxt = step_single_rate(sys, rule, DiscreteState.from_vector(x_i, 3), u)
    return x_i, nxt.x, u


def test_jacobian_matches_finite_differences(quadcopter, rule, quad_anchor):
    sys, _ = quadcopter
    exact = jacobian_linearize(sys, rule, anchor=quad_anchor)
    fd = finite_difference_linearize(sys, rule, anchor=quad_anchor)
    for name in ("M", "D", "J"):
        assert np.allclose(getattr(exact, name), getattr(fd, name), atol=1e-6)


def test_jacobian_and_variational_routes_agree(quadcopter, rule, quad_anchor):
    sys, _ = quadcopter
    x_i, x_next, u = quad_anchor
    jac = jacobian_linearize(sys, rule, anchor=quad_anchor)
    point = ApproximationPoint.from_configs(rule, x_i[:3], x_next[:3], u)
    var = variational_linearize(sys, rule, point, anchor=quad_anchor)
    report = check_equivalence(jac, var)
    assert report.passed, report.per_block
    assert np.max(np.abs(var.offset)) < 1e-8


def test_equivalence_requires_common_anchor(quadcopter, rule, quad_anchor):
    sys, _ = quadcopter
    jac = jacobian_linearize(sys, rule, anchor=quad_anchor)
    other = jacobian_linearize(sys, rule, ApproximationPoint(np.zeros(3), np.zeros(3), np.zeros(2)))
    with pytest.raises(UsageError):
        check_equivalence(jac, other)


def test_anchor_must_satisfy_dynamics(quadcopter, rule, quad_anchor):
    sys, _ = quadcopter
    x_i, x_next, u = quad_anchor
    with pytest.raises(UsageError):
        jacobian_linearize(sys, rule, anchor=(x_i, x_next + 0.1, u))


def test_prediction_is_second_order_accurate(quadcopter, rule, quad_anchor):
    sys, _ = quadcopter
    model = jacobian_linearize(sys, rule, anchor=quad_anchor)
    x_i, _, u = quad_anchor
    assert np.allclose(model.predict(x_i, u), model.x_next_anchor)
    errors = []
    for eps in (1e-2, 5e-3):
        dx = eps * np.ones(6)
        nxt = step_single_rate(sys, rule, DiscreteState.from_vector(x_i + dx, 3), u)
        errors.append(np.max(np.abs(nxt.x - model.predict(x_i + dx, u))))
    assert errors[1] < 0.35 * errors[0]


def test_singular_mass_block_is_rejected():
    with pytest.raises(LinearizationError):
        LinearModel(
            M=np.zeros((2, 2)),
            D=np.eye(2),
            J=np.zeros((2, 1)),
            point=None,
            x_anchor=np.zeros(2),
            x_next_anchor=np.zeros(2),
            u_anchor=np.zeros(1),
        )


def test_quadratic_system_has_zero_vertex_set(oscillator):
    rule = QuadratureRule(0.1)
    point = ApproximationPoint([0.2], [0.0], [0.0])
    region = Region(np.array([1.0]), np.array([1.0]), np.array([1.0]))
    vset = error_vertex_set(oscillator, rule, point, region)
    assert vset.n_j == 1
    assert vset.is_zero()


def test_pendulum_vertex_set_is_sound(pendulum):
    rule = QuadratureRule(0.05)
    point = ApproximationPoint([0.3], [0.1], [0.0])
    region = Region(np.array([0.2]), np.array([0.5]), np.array([1.0]))
    model = jacobian_linearize(pendulum, rule, point)
    vset = error_vertex_set(pendulum, rule, point, region, model)
    assert vset.n_j == 2
    report = check_soundness(pendulum, rule, model, vset, n_samples=200)
    assert report.n_samples > 0
    assert report.passed, report.max_slack


def test_remainder_range_covers_the_cosine(pendulum):
    point = ApproximationPoint([0.0], [0.0], [0.0])
    region = Region(np.array([0.1]), np.array([1.0]), np.array([1.0]))
    (channel,) = remainder_channels(pendulum, point, region)
    # -g cos(theta) + g on |theta| <= 0.1 reaches g (1 - cos 0.1)
    assert channel.hi >= 9.81 * (1.0 - np.cos(0.1))
    assert channel.lo <= 0.0


def test_unbounded_axis_is_a_bound_error(quadcopter, rule):
    sys, _ = quadcopter
    point = ApproximationPoint(np.zeros(3), np.zeros(3), np.zeros(2))
    region = Region(np.full(3, np.inf), np.ones(3), np.ones(2))
    with pytest.raises(BoundError):
        remainder_channels(sys, point, region)


def test_hull_slack():
    points = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    assert hull_slack(points, np.array([0.25, 0.25])) == pytest.approx(0.0, abs=1e-9)
    assert hull_slack(points, np.array([1.0, 1.0])) == pytest.approx(0.5, abs=1e-7)


def test_trust_maps_follow_the_expansion_point(quadcopter, rule, quad_anchor):
    sys, problem = quadcopter
    model = jacobian_linearize(sys, rule, anchor=quad_anchor)
    maps = trust_maps(sys, rule, model, problem.terminal_region).finite()
    assert maps.contains(np.zeros(6), np.zeros(2))
    assert not maps.contains(np.zeros(6), np.array([100.0, 0.0]))


@pytest.fixture
def fpu_linearization(fpu3):
    sys, partition, problem = fpu3
    rule = QuadratureRule(0.01)
    state = MacroState.from_vector(problem.x0, partition)
    anchor = multirate_anchor(sys, partition, rule, state, np.zeros(4))
    model, ext = linearize_multirate(sys, partition, rule, anchor)
    return sys, partition, rule, anchor, model, ext


def test_multirate_model_predicts_nearby_macro_steps(fpu_linearization):
    sys, partition, rule, anchor, model, _ = fpu_linearization
    assert np.max(np.abs(model.offset)) < 1e-8
    dx = 1e-4 * np.array([1.0, -1.0, 0.5, 0.5])
    du = 1e-4 * np.ones(4)
    nxt, _ = step_multirate_macro(sys, partition, rule, MacroState.from_vector(anchor.state.x + dx, partition), du)
    assert np.max(np.abs(nxt.x - model.predict(anchor.state.x + dx, du))) < 1e-6


def test_multirate_routes_agree(fpu_linearization):
    sys, partition, rule, anchor, jac, _ = fpu_linearization
    var, _ = linearize_multirate(sys, partition, rule, anchor, method="variational")
    assert check_equivalence(jac, var).passed


def test_micro_elimination_reproduces_the_micro_chain(fpu_linearization):
    sys, partition, rule, anchor, model, ext = fpu_linearization
    maps = micro_eliminate(ext, model)
    assert maps.micro_steps == 3
    dx = 1e-5 * np.array([1.0, 2.0, -1.0, 0.5])
    du = np.zeros(4)
    _, micro = step_multirate_macro(sys, partition, rule, MacroState.from_vector(anchor.state.x + dx, partition), du)
    _, micro_ref = step_multirate_macro(sys, partition, rule, anchor.state, du)
    predicted, _ = maps.predict(dx, du)
    for m in range(1, 3):
        assert np.allclose(micro.q_f[m] - micro_ref.q_f[m], predicted[m], atol=1e-8)


def test_combined_vertices_cover_the_direct_set_size(fpu_linearization):
    sys, partition, rule, anchor, model, ext = fpu_linearization
    points = anchor.points(ext.stack, rule)
    region = Region(np.array([0.05, 0.05]), np.array([1.0, 1.0]), np.array([1.0, 1.0]))
    direct = multirate_error_vertex_set(sys, rule, ext, model, points, region)
    w_set, micro = multirate_component_sets(sys, rule, ext, model, points, region)
    combined = combine_multirate_vertices(w_set, micro)
    assert combined.n_j <= len(w_set.W) * len(micro.Y)
    assert direct.n_x == combined.n_x == 4
    assert direct.n_u == combined.n_u == 4


def _benchmark_plant(name):
    if name == "quadcopter":
        sys, problem = make_quadcopter()
        return SingleRatePlant(sys, QuadratureRule(problem.dt)), problem.online_region(), None
    sys, partition, problem = make_fpu(micro_steps=3)
    return MultiratePlant(sys, partition, QuadratureRule(problem.dt)), problem.online_region(), partition


def _soundness(plant, partition, step, n_samples, seed):
    if partition is None:
        return check_soundness(plant.sys, plant.rule, step.model, step.vertex_set, n_samples, seed)
    x, u = step.model.x_anchor, step.model.u_anchor
    points = plant.anchor(x, u).points(plant.stack, plant.rule)
    return check_multirate_soundness(plant.sys, partition, plant.rule, step.model, points, step.vertex_set, n_samples, seed)


@pytest.mark.parametrize("name", ["quadcopter", "fpu"])
def test_benchmark_vertex_sets_are_sound_at_the_origin(name):
    plant, region, partition = _benchmark_plant(name)
    step = plant.origin_step(region)
    report = _soundness(plant, partition, step, n_samples=300, seed=1)
    assert report.n_samples >= 100
    assert report.passed, report.max_slack


@pytest.mark.parametrize("name", ["quadcopter", "fpu"])
def test_benchmark_vertex_sets_are_sound_at_sampled_anchors(name):
    plant, region, partition = _benchmark_plant(name)
    x_eq, u_eq = plant.equilibrium()
    rng = np.random.default_rng(7)
    for k in range(3):
        x = x_eq + rng.uniform(-0.3, 0.3, size=x_eq.shape)
        u = u_eq + rng.uniform(-0.2, 0.2, size=u_eq.shape)
        step = plant.linearize_step(x, u, plant.step(x, u), region)
        report = _soundness(plant, partition, step, n_samples=150, seed=k)
        assert report.n_samples >= 50
        assert report.passed, (k, report.max_slack)
