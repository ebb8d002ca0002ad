import json

import numpy as np
import pytest

from src.errors import ConfigError, InfeasibleProblem, RecursiveFeasibilityError
from src.harness.cli import EXIT_CONFIG, EXIT_OK, main
from src.harness.config import load_config, parse_config, validation_errors
from src.harness.diagnostics import compute_noether_maps, diagnose, max_deviation
from src.harness.runner import ExperimentRunner, build_experiment, run_experiment
from src.integrators.quadrature import QuadratureRule
from src.integrators.simulate import simulate


def test_defaults_fill_a_minimal_config():
    config = parse_config({"name": "quad", "pipeline": "simulate", "system": "quadcopter"})
    assert config.algorithm == 1
    assert config.mode == "constant"
    assert config.micro_steps == [1]


def test_overrides_replace_document_fields():
    config = parse_config({"system": "pendulum", "steps": 5}, {"steps": 9, "seed": None})
    assert config.steps == 9
    assert config.seed == 0


@pytest.mark.parametrize(
    "data",
    [
        {"pipeline": "mpc", "system": "pendulum"},
        {"system": "quadcopter", "micro_steps": [3]},
        {"pipeline": "multirate-sweep", "system": "fpu"},
        {"system": "fpu", "micro_steps": [0]},
        {"system": "unicycle"},
        {"dt": -0.1},
        {"system": "pendulum", "horizn": 5},
        {"system": "custom"},
        {"system": "pendulum", "custom_system": {"coordinates": ["x"], "controls": ["u"], "lagrangian": "xdot^2/2"}},
        {"system": "custom", "custom_system": {"coordinates": ["x"], "controls": ["u"], "lagrangian": "xdot^2/2 +* x"}},
        {"system": "custom", "custom_system": {"coordinates": ["x"], "controls": ["u"], "lagrangian": "xdot^2/2", "forces": ["u", "u"]}},
        {"system": "custom", "micro_steps": [2], "custom_system": {"coordinates": ["x"], "controls": ["u"], "lagrangian": "xdot^2/2"}},
        {"pipeline": "mpc", "system": "custom", "custom_system": {"coordinates": ["x"], "controls": ["u"], "lagrangian": "xdot^2/2"}},
    ],
)
def test_invalid_configs_are_rejected(data):
    assert validation_errors(data)
    with pytest.raises(ConfigError):
        parse_config(data)


def test_load_config_reports_bad_files(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")
    broken = tmp_path / "broken.json"
    broken.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(broken)
    listed = tmp_path / "list.json"
    listed.write_text("[1, 2]")
    with pytest.raises(ConfigError):
        load_config(listed)


def test_fpu_experiment_uses_macro_weights():
    exp = build_experiment(parse_config({"pipeline": "mpc", "system": "fpu", "micro_steps": [3]}))
    assert exp.micro_steps == 3
    assert np.allclose(exp.problem.Q, 0.03 * np.eye(4))


def test_forced_noether_maps_vanish_for_the_quadcopter(quadcopter, rng):
    sys, _ = quadcopter
    rule = QuadratureRule(0.05)
    controls = rng.uniform(-2.0, 2.0, size=(40, 2))
    traj = simulate(sys, rule, np.array([0.0, -1.0, -1.0, 0.1, 0.0, 0.2]), controls, 40)
    maps = compute_noether_maps(traj, sys.cyclic)
    assert set(maps) == {0, 2}
    for trace in maps.values():
        assert np.max(np.abs(trace)) <= 1e-8
    record = diagnose(sys, traj)
    assert set(record.noether) == {"y", "alpha"}
    assert record.extra["noether_max_y"] <= 1e-8


def test_systems_without_symmetry_have_no_noether_maps(pendulum):
    traj = simulate(pendulum, QuadratureRule(0.01), [0.5, 0.0], np.zeros((10, 1)), 10)
    assert compute_noether_maps(traj, pendulum.cyclic) == {}


def test_max_deviation_is_relative_to_the_start():
    assert max_deviation(np.array([1.0, 1.5, 0.25])) == pytest.approx(0.75)
    assert max_deviation(np.array([])) == 0.0


def test_simulate_pipeline_writes_its_artifacts(tmp_path):
    summary = run_experiment(parse_config({"name": "pend", "system": "pendulum", "steps": 50}), output_dir=tmp_path)
    out = tmp_path / "pend"
    for name in ("trajectory.csv", "energy.csv", "diagnostics.json", "summary.json"):
        assert (out / name).exists()
    assert summary.metrics["energy_max_deviation_variational"] < summary.metrics["energy_max_deviation_euler"]


def test_multirate_simulation_writes_micro_rows(tmp_path):
    runner = ExperimentRunner(output_dir=tmp_path)
    runner.run(parse_config({"name": "fpu", "system": "fpu", "micro_steps": [3], "steps": 4}))
    table = np.loadtxt(tmp_path / "fpu" / "trajectory.csv", delimiter=",", skiprows=1)
    assert table.shape[0] == 4 * 3 + 1


def test_linearization_comparison_agrees_along_a_run(tmp_path):
    runner = ExperimentRunner(output_dir=tmp_path)
    summary = runner.run(parse_config({"name": "lin", "pipeline": "linearize-compare", "system": "pendulum", "steps": 5}))
    assert summary.metrics["max_abs_diff"] <= 1e-8
    payload = json.loads((tmp_path / "lin" / "linearization.json").read_text())
    assert len(payload["per_step_max_abs_diff"]) == 5


def test_dump_conic_needs_a_regulation_problem(tmp_path):
    runner = ExperimentRunner(output_dir=tmp_path)
    with pytest.raises(ConfigError):
        runner.dump_conic_for(parse_config({"system": "pendulum"}))


def _write(tmp_path, data) -> str:
    path = tmp_path / "config.json"
    path.write_text(json.dumps(data))
    return str(path)


def test_cli_validate(tmp_path, capsys):
    assert main(["validate", "--config", _write(tmp_path, {"system": "pendulum"})]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["valid"] is True


def test_cli_reports_config_errors(tmp_path, capsys):
    assert main(["validate", "--config", _write(tmp_path, {"pipeline": "mpc", "system": "pendulum"})]) == EXIT_CONFIG
    assert capsys.readouterr().err.startswith("[config]")


def test_cli_run_with_overrides(tmp_path):
    config = _write(tmp_path, {"name": "osc", "system": "harmonic_oscillator", "steps": 100})
    out = tmp_path / "run"
    assert main(["run", "--config", config, "--steps", "10", "--output-dir", str(out)]) == EXIT_OK
    table = np.loadtxt(out / "trajectory.csv", delimiter=",", skiprows=1)
    assert table.shape[0] == 11


@pytest.mark.slow
def test_quadcopter_mpc_pipeline(tmp_path):
    runner = ExperimentRunner(output_dir=tmp_path)
    summary = runner.run(parse_config({"name": "quad", "pipeline": "mpc", "system": "quadcopter", "steps": 3, "dump_conic": True}))
    assert summary.metrics["n_rhocp"] == 3.0
    assert summary.metrics["max_constraint_violation"] == 0.0
    assert summary.metrics["noether_max_y"] <= 1e-8
    assert (tmp_path / "quad" / "conic" / "rhocp_k0.json").exists()


@pytest.mark.slow
def test_multirate_sweep_reports_timing(tmp_path):
    runner = ExperimentRunner(output_dir=tmp_path)
    config = {"name": "sweep", "pipeline": "multirate-sweep", "system": "fpu", "micro_steps": [1, 3, 5], "t_target": 0.3, "repeats": 1}
    summary = runner.run(parse_config(config))
    assert summary.metrics["n_rhocp_p1"] == 30.0
    assert summary.metrics["n_rhocp_p3"] == 10.0
    assert summary.metrics["n_rhocp_p5"] == 6.0
    timing = json.loads((tmp_path / "sweep" / "timing.json").read_text())
    assert [e["label"] for e in timing["entries"]] == ["p=1", "p=3", "p=5"]
    # fewer, larger RHOCPs still cost less online time in total
    assert summary.metrics["total_mean_p1"] > summary.metrics["total_mean_p3"] > summary.metrics["total_mean_p5"]


@pytest.mark.slow
def test_varying_tube_sweep_gets_cheaper_with_more_micro_steps(tmp_path):
    runner = ExperimentRunner(output_dir=tmp_path)
    config = {"name": "sweep2", "pipeline": "multirate-sweep", "system": "fpu", "micro_steps": [1, 3], "t_target": 0.3, "algorithm": 2, "repeats": 1}
    summary = runner.run(parse_config(config))
    assert summary.metrics["n_rhocp_p1"] == 30.0
    assert summary.metrics["n_rhocp_p3"] == 10.0
    assert summary.metrics["total_mean_p1"] > summary.metrics["total_mean_p3"]
    assert "tube_fallbacks_p1" in summary.metrics and "tube_fallbacks_p3" in summary.metrics


@pytest.mark.slow
def test_varying_tubes_at_five_micro_steps_do_not_run_clean(tmp_path):
    runner = ExperimentRunner(output_dir=tmp_path)
    config = {"name": "sweep5", "pipeline": "multirate-sweep", "system": "fpu", "micro_steps": [5], "t_target": 0.3, "algorithm": 2, "repeats": 1}
    try:
        summary = runner.run(parse_config(config))
    except (InfeasibleProblem, RecursiveFeasibilityError):
        return
    # varying cross-sections only survive by falling back to the constant tube
    assert summary.metrics["tube_fallbacks_p5"] > 0


PENDULUM_TEXT = {
    "name": "driven-pendulum",
    "coordinates": ["th"],
    "controls": ["u"],
    "lagrangian": "thdot^2/2 + g*cos(th)",
    "forces": ["u"],
    "parameters": {"g": 9.81},
    "separable": True,
    "region": {"q_radius": [0.2], "v_radius": [0.5], "u_radius": [1.0]},
}

TWO_SCALE_TEXT = {
    "coordinates": ["a", "b"],
    "controls": ["ua", "ub"],
    "lagrangian": "adot^2/2 + bdot^2/2 - a^2/2 - 25*b^2/2",
    "forces": ["ua", "ub"],
    "separable": True,
    "partition": {"slow": ["a"], "fast": ["b"], "slow_controls": ["ua"], "fast_controls": ["ub"]},
}


def test_custom_system_runs_through_the_cli(tmp_path, capsys):
    data = {"name": "custom-pend", "system": "custom", "custom_system": PENDULUM_TEXT, "x0": [0.5, 0.0], "steps": 50}
    out = tmp_path / "run"
    assert main(["run", "--config", _write(tmp_path, data), "--output-dir", str(out)]) == EXIT_OK
    table = np.loadtxt(out / "trajectory.csv", delimiter=",", skiprows=1)
    assert table.shape[0] == 51
    summary = json.loads(capsys.readouterr().out)
    assert summary["metrics"]["energy_max_deviation_variational"] < summary["metrics"]["energy_max_deviation_euler"]


def test_custom_system_matches_the_built_in_pendulum(tmp_path):
    text = run_experiment(parse_config({"name": "a", "system": "custom", "custom_system": PENDULUM_TEXT, "x0": [0.5, 0.0], "steps": 20}), tmp_path)
    built_in = run_experiment(parse_config({"name": "b", "system": "pendulum", "x0": [0.5, 0.0], "steps": 20}), tmp_path)
    a = np.loadtxt(tmp_path / "a" / "trajectory.csv", delimiter=",", skiprows=1)
    b = np.loadtxt(tmp_path / "b" / "trajectory.csv", delimiter=",", skiprows=1)
    assert text.system == "custom"
    assert np.allclose(a, b, atol=1e-10)


def test_custom_region_enables_the_soundness_sample(tmp_path):
    config = {"name": "lin", "pipeline": "linearize-compare", "system": "custom", "custom_system": PENDULUM_TEXT, "steps": 3, "soundness_samples": 200}
    summary = run_experiment(parse_config(config), tmp_path)
    assert summary.metrics["max_abs_diff"] <= 1e-8
    assert summary.metrics["soundness_max_slack"] <= 1e-6
    assert summary.metrics["n_vertices"] >= 2


def test_custom_partition_simulates_on_the_macro_grid(tmp_path):
    config = {"name": "two", "system": "custom", "custom_system": TWO_SCALE_TEXT, "micro_steps": [2], "x0": [1.0, 0.1, 0.0, 0.0], "steps": 5}
    run_experiment(parse_config(config), tmp_path)
    table = np.loadtxt(tmp_path / "two" / "trajectory.csv", delimiter=",", skiprows=1)
    assert table.shape[0] == 5 * 2 + 1


def test_custom_partition_must_name_declared_coordinates():
    broken = {**TWO_SCALE_TEXT, "partition": {"slow": ["a"], "fast": ["c"], "slow_controls": ["ua"], "fast_controls": ["ub"]}}
    errors = validation_errors({"system": "custom", "custom_system": broken})
    assert any("not declared" in e for e in errors)


def test_fpu_simulation_reports_the_energy_comparison(tmp_path):
    summary = run_experiment(parse_config({"name": "fpu-energy", "system": "fpu", "dt": 0.001, "steps": 2000}), tmp_path)
    m = summary.metrics
    assert m["energy_max_deviation_variational"] < m["energy_max_deviation_euler"]
    assert m["energy_max_deviation_successive"] < m["energy_max_deviation_euler"]
    energy = np.loadtxt(tmp_path / "fpu-energy" / "energy.csv", delimiter=",", skiprows=1)
    assert energy.shape == (2001, 4)
