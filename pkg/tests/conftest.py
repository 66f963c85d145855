import pytest

_CRITERIA: dict[int, tuple[bool | None, str]] = {}


@pytest.fixture
def criterion():
    """Record the outcome of a numbered acceptance criterion for the summary."""

    def record(number: int, ok: bool | None, detail: str) -> None:
        _CRITERIA[number] = (ok, detail)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        ok, detail = _CRITERIA[n]
        status = "SKIP" if ok is None else ("PASS" if ok else "FAIL")
        terminalreporter.write_line(f"criterion {n}: {status}  {detail}")
