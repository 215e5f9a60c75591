import re

import pytest

_ACCEPTANCE: dict[str, tuple[bool, str]] = {}


@pytest.fixture
def record():
    """``record(criterion, passed, detail)`` stores a line for the acceptance summary."""

    def _record(criterion: str, passed: bool, detail: str) -> bool:
        _ACCEPTANCE[criterion] = (bool(passed), detail)
        return bool(passed)

    return _record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    def order(name):
        num, tag = re.match(r"(\d+)(\w*)", name).groups()
        return int(num), tag

    for name in sorted(_ACCEPTANCE, key=order):
        ok, detail = _ACCEPTANCE[name]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
