"""Acceptance suite: one test per criterion, each printing a pass/fail line.

The lines are also repeated in the terminal summary (see conftest.py) so they
show up in a plain ``pytest -v`` log.
"""

import numpy as np
import pytest

from impactlab.acceptance import CRITERIA, check_family_collapse, run_criterion
from impactlab.measures import relative_reachability

RESULTS = []


@pytest.mark.parametrize("name", list(CRITERIA))
def test_criterion(name):
    result = run_criterion(name)
    RESULTS.append(result.line())
    print(result.line())
    assert result.passed, result.line()


def test_family_collapse_catches_a_sign_flip():
    """Mutation check: a relative reachability with the clip reversed must be rejected."""

    def flipped(mdp, acted, base, tol=1e-12, reach=None):
        return relative_reachability(mdp, base, acted, tol, reach)

    ok, detail = check_family_collapse(count=30, rr_impl=flipped)
    line = f"[{'PASS' if not ok else 'FAIL'}] {'mutation':<16} sign-flipped RR rejected: {detail}"
    RESULTS.append(line)
    print(line)
    assert not ok


def test_criteria_cover_every_listed_property():
    assert list(CRITERIA) == ["oracle", "family-collapse", "bounds", "telescoping", "pathologies",
                              "subagent", "scalarization", "determinism"]
    assert all(budget > 0 for _, budget in CRITERIA.values())
    assert np.isfinite([b for _, b in CRITERIA.values()]).all()
