import dataclasses

import pytest

from dremsim import integrate
from dremsim.expcli import bundled_scenario_path, load_scenario_file
from dremsim.signals import Constant, ZERO


def load_bundled(name):
    return load_scenario_file(bundled_scenario_path(name))


@pytest.fixture(scope="session")
def scenario_a():
    return load_bundled("scenario_a")


@pytest.fixture(scope="session")
def scenario_b():
    return load_bundled("scenario_b")


@pytest.fixture(scope="session")
def scenario_c():
    return load_bundled("scenario_c")


# Full-horizon runs are shared across test modules; each is a few hundred
# thousand RK4 steps, so run them once per session.

@pytest.fixture(scope="session")
def run_a_averaging(scenario_a):
    return integrate(scenario_a.select("averaging"))


@pytest.fixture(scope="session")
def run_a_gradient(scenario_a):
    return integrate(scenario_a.select("gradient"))


@pytest.fixture(scope="session")
def run_a_gradient_nodist(scenario_a):
    spec = scenario_a.select("gradient")
    spec = dataclasses.replace(spec, disturbance=ZERO, horizon=100.0)
    return integrate(spec)


@pytest.fixture(scope="session")
def run_a_averaging_fine(scenario_a):
    # densely sampled start of the run, for derivative and decay checks
    spec = scenario_a.select("averaging")
    spec = dataclasses.replace(spec, horizon=10.0, sample_every=1e-3)
    return integrate(spec)


@pytest.fixture(scope="session")
def run_b_averaging(scenario_b):
    return integrate(scenario_b.select("averaging"))


@pytest.fixture(scope="session")
def run_b_gradient(scenario_b):
    return integrate(scenario_b.select("gradient"))


@pytest.fixture(scope="session")
def run_c_averaging(scenario_c):
    return integrate(scenario_c.select("averaging"))


@pytest.fixture(scope="session")
def run_c_gradient(scenario_c):
    return integrate(scenario_c.select("gradient"))
