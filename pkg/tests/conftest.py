import numpy as np
import pytest

from conceptsr import RunConfig
from conceptsr.data import Dataset


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_cfg():
    # tiny budgets so unit tests stay fast
    return RunConfig(iterations=3, n_populations=2, population_size=12, cycles_per_iteration=10,
                     optimizer_budget=30, optimizer_restarts=0, seed=0)


@pytest.fixture
def linear_data():
    rng = np.random.default_rng(0)
    x = rng.uniform(-2, 2, size=(200, 2))
    y = 3.0 * x[:, 0] - 2.0 * x[:, 1] + 0.5
    return Dataset(("x1", "x2"), x, y)


ACCEPTANCE = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    if rep.when == "call" or (rep.when == "setup" and rep.failed):
        ACCEPTANCE[number] = (title, "PASS" if rep.passed else "FAIL")


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        title, status = ACCEPTANCE[number]
        terminalreporter.write_line(f"{status} criterion {number:>2}: {title}")
