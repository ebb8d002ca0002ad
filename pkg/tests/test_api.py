import pytest
from fastapi.testclient import TestClient

from src.api import app
from src.api.deps import get_runner
from src.harness.runner import ExperimentRunner


@pytest.fixture
def client(tmp_path):
    app.dependency_overrides[get_runner] = lambda: ExperimentRunner(output_dir=tmp_path)
    yield TestClient(app)
    app.dependency_overrides.clear()


def test_root_and_health(client):
    assert client.get("/").status_code == 200
    assert client.get("/health").json() == {"status": "ok"}


def test_systems_lists_the_benchmarks(client):
    systems = {s["name"]: s for s in client.get("/systems").json()["systems"]}
    assert systems["quadcopter"]["n_x"] == 6
    assert systems["quadcopter"]["controlled"] is True
    assert systems["fpu"]["multirate"] is True
    assert systems["pendulum"]["controlled"] is False


def test_validate_returns_error_list(client):
    ok = client.post("/experiments/validate", json={"system": "pendulum"}).json()
    assert ok == {"valid": True, "errors": []}
    bad = client.post("/experiments/validate", json={"pipeline": "mpc", "system": "pendulum"}).json()
    assert bad["valid"] is False
    assert bad["errors"]


def test_run_simulation(client, tmp_path):
    response = client.post("/experiments/run", json={"name": "api-osc", "system": "harmonic_oscillator", "steps": 20})
    assert response.status_code == 200
    body = response.json()
    assert body["pipeline"] == "simulate"
    assert any(path.endswith("trajectory.csv") for path in body["artifacts"])
    assert (tmp_path / "api-osc" / "summary.json").exists()


def test_run_rejects_invalid_config(client):
    response = client.post("/experiments/run", json={"system": "pendulum", "micro_steps": [2]})
    assert response.status_code == 422


DAMPED_SPRING = {
    "name": "spring",
    "coordinates": ["x"],
    "controls": ["u"],
    "lagrangian": "xdot^2/2 - k*x^2/2",
    "forces": ["u - c*xdot"],
    "parameters": {"k": 4.0, "c": 0.5},
    "separable": True,
}


def test_run_custom_system(client, tmp_path):
    config = {"name": "api-spring", "system": "custom", "custom_system": DAMPED_SPRING, "x0": [1.0, 0.0], "steps": 30}
    response = client.post("/experiments/run", json=config)
    assert response.status_code == 200
    assert response.json()["system"] == "custom"
    assert (tmp_path / "api-spring" / "trajectory.csv").exists()


def test_run_rejects_unparsable_custom_system(client):
    broken = {**DAMPED_SPRING, "lagrangian": "xdot^2/2 - y"}
    response = client.post("/experiments/run", json={"system": "custom", "custom_system": broken})
    assert response.status_code == 422


def test_run_body_is_documented_as_an_experiment_config(client):
    schema = client.get("/openapi.json").json()
    body = schema["paths"]["/experiments/run"]["post"]["requestBody"]["content"]["application/json"]["schema"]
    assert body["$ref"].endswith("/ExperimentConfig")
    assert "CustomSystemConfig" in schema["components"]["schemas"]
