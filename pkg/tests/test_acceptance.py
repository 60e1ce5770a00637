import pytest

from vortexlab.acceptance import CRITERIA, run_criterion


@pytest.mark.parametrize("number", sorted(CRITERIA))
def test_criterion(number, acceptance_log):
    """Full-size acceptance check; the summary line is printed at the end of the session."""
    result = run_criterion(number, seed=0, fast=False)
    line = result.line(timing=True)
    acceptance_log[number] = line
    print(line)
    assert result.passed, line
