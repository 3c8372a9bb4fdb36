"""Every acceptance criterion at its stated tolerance, desk profile, fixed seed."""

import pytest

from nested_sieve.acceptance import ACCEPTANCE_SEED, CRITERIA, run_criterion

from conftest import ACCEPTANCE_LINES, THREADS


@pytest.mark.slow
@pytest.mark.parametrize("number", sorted(CRITERIA))
def test_criterion(number):
    res = run_criterion(number, "desk", threads=THREADS, seed=ACCEPTANCE_SEED)
    line = res.line()
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert res.passed, line
