"""Shared pytest hooks: one summary line per acceptance criterion."""

ACCEPTANCE: dict = {}


def record(num: int, name: str, ok: bool, detail: str, seconds: float, limit: float):
    ok_time = seconds < limit
    ACCEPTANCE[num] = (name, ok and ok_time, f"{detail}; {seconds:.1f}s (limit {limit:g}s)")
    return ok and ok_time


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        name, ok, detail = ACCEPTANCE[num]
        tr.write_line(f"[{'PASS' if ok else 'FAIL'}] {num:2d} {name}: {detail}")
