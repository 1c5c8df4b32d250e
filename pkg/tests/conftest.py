import pytest

_LINES: list[str] = []


@pytest.fixture
def criterion():
    """Record one summary line per acceptance criterion."""
    def record(k: int, ok: bool, detail: str, seconds: float):
        line = f"criterion {k}: {'PASS' if ok else 'FAIL'} ({seconds:.1f} s) {detail}"
        _LINES.append(line)
        print(line)
    return record


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_LINES):
            terminalreporter.write_line(line)
