import numpy as np
import pytest

# pass/fail lines appended by the acceptance tests, echoed after the run
ACCEPTANCE_LINES = []


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def report():
    """``report(n, passed, detail)`` records one acceptance line and returns ``passed``."""

    def record(n, passed, detail):
        line = f"criterion {n:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
