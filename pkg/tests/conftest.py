import os

import numpy as np
import pytest

THREADS = max(1, min(4, os.cpu_count() or 1))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def within_se(mean, target, se, k=3.0):
    return abs(mean - target) <= k * se


# filled by test_acceptance.py, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
