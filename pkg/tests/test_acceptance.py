"""Acceptance criteria 1-13, one test each.

Each test prints a single ``[PASS]``/``[FAIL]`` line with the computed
values; run ``python tests/test_acceptance.py`` for the same table
without pytest.
"""

import pytest

from rydbec import reproduce as RP


@pytest.mark.parametrize("number", sorted(RP.CRITERIA))
def test_criterion(number, capsys):
    check = RP.CRITERIA[number]()
    with capsys.disabled():
        print("\n" + check.line())
    assert check.passed, check.line()


if __name__ == "__main__":
    print(RP.table(RP.run_all()))
