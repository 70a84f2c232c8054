import pytest

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def record():
    """Append one acceptance line; the lines are echoed at the end of the session."""
    def _rec(n: int, ok: bool, detail: str) -> None:
        line = f"criterion {n:>2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
    return _rec


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split(":")[0].split()[1])):
            terminalreporter.write_line(line)
