"""Shared test plumbing: the acceptance criteria scoreboard."""

_RESULTS: list[tuple[str, bool, str]] = []


def log_criterion(name: str, passed: bool, detail: str = "") -> None:
    _RESULTS.append((name, passed, detail))


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in _RESULTS:
        status = "PASS" if passed else "FAIL"
        suffix = f"  ({detail})" if detail else ""
        terminalreporter.write_line(f"[{status}] {name}{suffix}")
