import sys
import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def three_sigma(p, n):
    """Three binomial standard deviations, floored so that p in {0, 1} is not degenerate."""
    return 3.0 * np.sqrt(max(p * (1 - p), 1.0 / n) / n)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.line(num))
