import pytest

# acceptance checks append (criterion, part, ok, detail); printed after the run
ACCEPTANCE: list = []


@pytest.fixture
def record():
    def _record(criterion: int, part: str, ok: bool, detail: str) -> bool:
        ACCEPTANCE.append((criterion, part, bool(ok), detail))
        return bool(ok)

    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for c in sorted({r[0] for r in ACCEPTANCE}):
        parts = [r for r in ACCEPTANCE if r[0] == c]
        ok = all(r[2] for r in parts)
        tr.write_line(f"{'PASS' if ok else 'FAIL'} criterion {c}: " + "; ".join(f"{r[1]} {r[3]}" for r in parts))
