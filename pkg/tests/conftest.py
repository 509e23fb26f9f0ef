from __future__ import annotations

import sys
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

from agility.scenario import bundled_scenarios, load_scenario  # noqa: E402

settings.register_profile("agility", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("agility")

_criteria: dict[int, dict] = {}


@pytest.fixture
def scenario():
    """Load a bundled scenario by name."""
    paths = bundled_scenarios()

    def _load(name: str):
        return load_scenario(paths[name])

    return _load


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    entry = _criteria.setdefault(number, {"title": title, "ok": True, "ran": False})
    if report.when == "call":
        entry["ran"] = True
    if report.failed:
        entry["ok"] = False


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        entry = _criteria[number]
        status = "PASS" if entry["ok"] and entry["ran"] else "FAIL"
        terminalreporter.write_line(f"[{status}] {number}. {entry['title']}")
