"""Every acceptance criterion at its stated tolerance, full suite, master seed 0.

The suite runs once per session (criterion 10 runs it a second time and
compares hashes). One PASS/FAIL line per criterion is printed and repeated
in the terminal summary.
"""

import pytest

from cascadelab import acceptance

from .conftest import ACCEPTANCE_LINES


@pytest.fixture(scope="module")
def summary():
    return acceptance.run_suite("full", master_seed=0)


@pytest.mark.parametrize("number", range(1, 11))
def test_criterion(summary, number):
    (res,) = [r for r in summary.results if r.number == number]
    line = res.line()
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert res.passed, res.metrics


def test_budgets(summary):
    over = [(r.number, round(r.seconds, 1), r.budget) for r in summary.results if not r.within_budget]
    assert not over
