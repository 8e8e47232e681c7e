import pytest

# criterion number -> list of (passed, detail); filled by the acceptance tests
VERDICTS: dict[int, list] = {}


@pytest.fixture
def verdict():
    def record(n: int, passed: bool, detail: str) -> bool:
        VERDICTS.setdefault(n, []).append((bool(passed), detail))
        return bool(passed)

    return record


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in range(1, 9):
        parts = VERDICTS.get(n)
        if not parts:
            tr.write_line(f"criterion {n}: NOT RUN")
            continue
        ok = all(p for p, _ in parts)
        tr.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'} | " + "; ".join(d for _, d in parts))
