import pytest

# one line per acceptance criterion, filled in by test_acceptance.py
CRITERIA_LINES = []


@pytest.fixture
def criterion():
    def report(number: int, name: str, ok: bool, detail: str):
        line = f"criterion {number:2d} {name}: {'PASS' if ok else 'FAIL'} ({detail})"
        CRITERIA_LINES.append((number, line))
        print(line, flush=True)
        return ok
    return report


def pytest_terminal_summary(terminalreporter):
    if CRITERIA_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(CRITERIA_LINES):
            terminalreporter.write_line(line)
