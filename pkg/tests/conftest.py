import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

# criterion number -> (passed, detail); filled by test_acceptance
ACCEPTANCE = {}


@pytest.fixture
def acceptance():
    def record(number: int, title: str, passed: bool, detail: str = "") -> bool:
        ACCEPTANCE[number] = (title, bool(passed), detail)
        print(f"[{'PASS' if passed else 'FAIL'}] {number}. {title}: {detail}")
        return bool(passed)

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        title, passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {number}. {title}: {detail}")
