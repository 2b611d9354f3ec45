import numpy as np
import pytest

_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def report():
    """Record a one-line pass/fail verdict for an acceptance criterion."""

    def _report(criterion: str, passed, detail: str = ""):
        # passed=None marks a criterion that was not evaluated
        status = "SKIP" if passed is None else "PASS" if passed else "FAIL"
        _ACCEPTANCE_LINES.append(f"[{status}] {criterion}: {detail}")
        return passed

    return _report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
