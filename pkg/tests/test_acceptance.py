"""Acceptance criteria at full tolerance, one test per criterion.

Each test prints a single PASS/FAIL line; the lines are repeated in the
terminal summary under "acceptance criteria".
"""

import pytest

from capfoil.acceptance import CHECKS
from conftest import ACCEPTANCE_LINES


@pytest.mark.parametrize("criterion", sorted(CHECKS), ids=lambda k: f"{k:02d}-{CHECKS[k].__name__}")
def test_criterion(criterion):
    res = CHECKS[criterion]()
    line = f"criterion {criterion:2d} {res.line()}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert res.passed, res.details
