"""Shared pytest wiring: the acceptance suite records one verdict line per
criterion and this hook replays them after the run summary, so the pass/fail
ledger is visible even though pytest swallows stdout of passing tests."""

criterion_lines: list[str] = []


def record_criterion(number: int, ok: bool, detail: str) -> None:
    line = f"[criterion {number:02d}] {'PASS' if ok else 'FAIL'}: {detail}"
    criterion_lines.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not criterion_lines:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for line in criterion_lines:
        terminalreporter.write_line(line)
