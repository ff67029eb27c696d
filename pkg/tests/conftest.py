import numpy as np
import pytest

_ACCEPTANCE = {}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def criterion():
    """Record a pass/fail line for an acceptance criterion."""

    def record(number, name, passed, detail=""):
        _ACCEPTANCE[number] = (name, bool(passed), detail)
        print(f"ACCEPTANCE {number:>2} {'PASS' if passed else 'FAIL'} {name} {detail}")
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        name, passed, detail = _ACCEPTANCE[number]
        terminalreporter.write_line(f"[{number:>2}] {'PASS' if passed else 'FAIL'}  {name}  {detail}")
