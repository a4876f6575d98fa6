import pytest

from closedloop.loader import load_domain, load_scenario, shipped_scenarios
from closedloop.runner import run_scenario, scenario_config


def scenario_path(name):
    for p in shipped_scenarios():
        if p.stem == name:
            return p
    raise LookupError(name)


def run_named(name, arm=None, seed=0, **overrides):
    sc = load_scenario(scenario_path(name))
    return run_scenario(sc, scenario_config(sc, seed=seed, arm=arm, **overrides))


@pytest.fixture(scope="session")
def tabletop():
    return load_domain("tabletop")


@pytest.fixture(scope="session")
def box():
    return load_domain("box")


@pytest.fixture(scope="session")
def home():
    return load_domain("home")


@pytest.fixture(scope="session")
def grid():
    return load_domain("grid")
