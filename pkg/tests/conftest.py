import numpy as np
import pytest

from src.integrators.quadrature import QuadratureRule
from src.models.benchmarks import make_fpu, make_harmonic_oscillator, make_pendulum, make_quadcopter


@pytest.fixture(scope="session")
def quadcopter():
    return make_quadcopter()


@pytest.fixture(scope="session")
def fpu():
    return make_fpu()


@pytest.fixture(scope="session")
def fpu3():
    return make_fpu(micro_steps=3)


@pytest.fixture(scope="session")
def oscillator():
    return make_harmonic_oscillator()


@pytest.fixture(scope="session")
def pendulum():
    return make_pendulum()


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def rule():
    return QuadratureRule(0.05)
