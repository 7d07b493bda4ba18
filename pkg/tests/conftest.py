import numpy as np
import pytest

from conjmoments.dataset import load_dataset


@pytest.fixture(scope="session")
def rows():
    return {r.id: r for r in load_dataset()}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_configure(config):
    config._criterion_lines = []


@pytest.fixture
def record_criterion(request):
    """Print and keep one PASS/FAIL line per acceptance criterion."""
    reporter = request.config.pluginmanager.get_plugin("terminalreporter")

    def record(number, name, ok, detail):
        line = f"CRITERION {number} [{name}]: {'PASS' if ok else 'FAIL'} | {detail}"
        request.config._criterion_lines.append(line)
        if reporter is not None:
            reporter.write_line("")
            reporter.write_line(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_criterion_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
