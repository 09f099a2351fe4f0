"""Acceptance matrix: criteria 1-10 at their pinned tolerances.

The matrix runs twice into separate directories. Criterion 10 additionally
requires every output except ``timings.json`` to be byte-identical across the
two runs. One PASS/FAIL line per criterion is printed in the terminal summary.
"""

import pytest

from blowup.verify import verify

from conftest import record_criterion

CRITERIA = {
    1: "sphere moments and Gram constants",
    2: "projection onto trace-free quadratic harmonics",
    3: "center ODE on a three-ball configuration",
    4: "moment identity, second-order convergence",
    5: "dyadic scaling, closed and sampled",
    6: "finite dissipation on the geometric family",
    7: "Lyapunov balance on grid solutions",
    8: "annulus absorption and Volterra bound",
    9: "grid solver against the radial solution",
    10: "deterministic outputs",
}


@pytest.fixture(scope="session")
def matrix(tmp_path_factory):
    first = tmp_path_factory.mktemp("verify-a")
    second = tmp_path_factory.mktemp("verify-b")
    return verify(first), verify(second), first, second


def _identical_outputs(a, b):
    names = sorted(p.name for p in a.iterdir() if p.name != "timings.json")
    other = sorted(p.name for p in b.iterdir() if p.name != "timings.json")
    if names != other:
        return False, f"file sets differ: {names} vs {other}"
    diff = [n for n in names if (a / n).read_bytes() != (b / n).read_bytes()]
    return not diff, f"{len(names)} files compared" + (f", differing: {diff}" if diff else "")


@pytest.mark.parametrize("number", sorted(CRITERIA))
def test_criterion(matrix, number):
    result, repeat, first, second = matrix
    rows = [r for r in result.rows if r.criterion == number]
    assert rows, f"no rows for criterion {number}"
    passed = result.criterion_passed(number)
    detail = "; ".join(f"{r.anchor} value={r.value:.4g}" for r in rows)
    if number == 10:
        same, note = _identical_outputs(first, second)
        passed = passed and same and repeat.criterion_passed(10)
        detail = f"{detail}; {note}"
    record_criterion(number, passed, f"{CRITERIA[number]} ({detail})")
    assert passed, detail


def test_every_anchor_reported_once(matrix):
    anchors = [r.anchor for r in matrix[0].rows]
    assert len(anchors) == len(set(anchors))


def test_supporting_hard_rows(matrix):
    failed = [r.anchor for r in matrix[0].rows if r.hard and not r.passed]
    assert failed == []
