import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from reward_tweaking import (
    canonical_puddle_layout,
    make_chain_fixture,
    make_four_state_mdp,
    make_puddle_world,
)

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("repo", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")

_criteria: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")
    config.addinivalue_line("markers", "slow: takes more than a few seconds")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or (rep.when != "call" and not rep.failed):
        return
    number, title = marker.args
    entry = _criteria.setdefault(number, {"title": title, "ok": True, "tests": 0})
    entry["ok"] &= rep.passed
    if rep.when == "call":
        entry["tests"] += 1


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        e = _criteria[number]
        status = "PASS" if e["ok"] else "FAIL"
        terminalreporter.write_line(f"criterion {number}: {status}  {e['title']} ({e['tests']} tests)")


@pytest.fixture(scope="session")
def four_state():
    return make_four_state_mdp(0.5, 0.0, 2.0)


@pytest.fixture(scope="session")
def layout():
    return canonical_puddle_layout()


@pytest.fixture(scope="session")
def puddle(layout):
    return make_puddle_world(layout)


@pytest.fixture(scope="session")
def chain():
    return make_chain_fixture()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
