import sys

import numpy as np
import pytest

from msmcohort.events import prepare_long
from msmcohort.simulate import illness_death_spec, simulate_dataset
from msmcohort.states import StateSpace, SubjectHistory, covid_state_space


@pytest.fixture
def covid():
    return covid_state_space(90.0)


@pytest.fixture
def illness_death():
    return StateSpace(["Healthy", "Ill", "Dead"],
                      [("Healthy", "Ill"), ("Healthy", "Dead"), ("Ill", "Dead")], 30.0)


@pytest.fixture
def toy_histories():
    """Six hand-written subjects on the illness-death scheme."""
    return [
        SubjectHistory(1, 1, {"x": 0.5}, [("Healthy", 0.0)], 4.0, "Dead"),
        SubjectHistory(2, 1, {"x": -1.0}, [("Healthy", 0.0), ("Ill", 2.0)], 6.0, "Dead"),
        SubjectHistory(3, 1, {"x": 1.5}, [("Healthy", 0.0)], 7.0, None),
        SubjectHistory(4, 1, {"x": 0.0}, [("Healthy", 0.0), ("Ill", 3.0)], 8.0, None),
        SubjectHistory(5, 1, {"x": 2.0}, [("Ill", 0.0)], 5.0, "Dead"),
        SubjectHistory(6, 1, {"x": -0.5}, [("Healthy", 0.0), ("Ill", 1.0)], 9.0, "Dead"),
    ]


@pytest.fixture(scope="session")
def markov_records():
    spec = illness_death_spec((600,), beta={"x": 0.5}, clock="markov")
    hist = simulate_dataset(spec, 11)
    return spec, prepare_long(hist, spec.space, ["x"])


@pytest.fixture
def rng():
    return np.random.default_rng(20261016)


def pytest_terminal_summary(terminalreporter):
    acc = sys.modules.get("test_acceptance")
    if acc is None or not acc.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(acc.RESULTS):
        terminalreporter.write_line(acc.RESULTS[n])
