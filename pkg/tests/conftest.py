"""Collects acceptance verdicts and prints them after the run."""

_VERDICTS: list[tuple[int, bool, str]] = []


def record_verdict(criterion: int, ok: bool, detail: str) -> None:
    line = f"criterion {criterion:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(line)
    _VERDICTS.append((criterion, ok, detail))


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, ok, detail in sorted(_VERDICTS, key=lambda v: v[0]):
        terminalreporter.write_line(
            f"criterion {criterion:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
