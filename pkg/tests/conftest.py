"""Shared acceptance bookkeeping: one printed PASS/FAIL line per criterion."""

import pytest

ACCEPTANCE_RESULTS: list[tuple[int, str, bool, str]] = []


def record_criterion(number: int, name: str, ok: bool, detail: str) -> None:
    ACCEPTANCE_RESULTS.append((number, name, bool(ok), detail))


@pytest.fixture
def criterion():
    """Recorder for the acceptance summary; call before asserting."""
    return record_criterion


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number, name, ok, detail in sorted(ACCEPTANCE_RESULTS):
        status = "PASS" if ok else "FAIL"
        terminalreporter.write_line(f"criterion {number:2d} [{status}] {name}: {detail}")
