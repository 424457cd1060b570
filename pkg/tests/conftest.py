"""Collects the acceptance verdicts and prints them at the end of the run."""

import pytest

_ACCEPTANCE = []


@pytest.fixture
def verdict(request):
    """Call ``verdict(n, title, passed, detail)`` once per acceptance criterion."""

    def record(number, title, passed, detail=""):
        line = f"ACCEPTANCE {number} {'PASS' if passed else 'FAIL'}: {title}" + (f" ({detail})" if detail else "")
        _ACCEPTANCE.append((number, line))
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_ACCEPTANCE):
        terminalreporter.write_line(line)
