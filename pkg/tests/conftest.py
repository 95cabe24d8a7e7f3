import re
import sys

import pytest
from hypothesis import HealthCheck, settings

from specsim import attacks
from specsim.config import load_preset

settings.register_profile("default", deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


_reports = {}


@pytest.fixture(scope="session")
def preset_report():
    """Cached default run of a preset, with architectural checks enabled."""
    def get(name):
        if name not in _reports:
            _reports[name] = attacks.run_scenario(load_preset(name), check_arch=True)
        return _reports[name]
    return get


def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion that ran."""
    mod = next((m for k, m in sys.modules.items() if k.split(".")[-1] == "test_acceptance"), None)
    if mod is None:
        return
    lines = dict(mod.RESULTS)
    for rep in terminalreporter.stats.get("failed", []) + terminalreporter.stats.get("error", []):
        m = re.search(r"test_c(\d+)_", rep.nodeid)
        if m and int(m.group(1)) not in lines:
            lines[int(m.group(1))] = f"criterion {int(m.group(1)):2d}: FAIL  raised before reporting"
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
