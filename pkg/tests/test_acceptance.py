"""Acceptance criteria 1-14 at their stated tolerances, one PASS/FAIL line per criterion."""
import pytest

from bbmpe.validation import CRITERIA, run_criterion


@pytest.mark.acceptance
@pytest.mark.parametrize("number", sorted(CRITERIA))
def test_criterion(number, capsys):
    result = run_criterion(number)
    with capsys.disabled():
        print("\n" + result.line())
        if not result.passed:
            print(f"    measured: {result.to_dict()['measured']}")
            if result.error:
                print(f"    error: {result.error}")
    assert result.passed, result.to_dict()
