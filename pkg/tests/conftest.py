import pytest

_CRITERIA: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Record a one-line pass/fail verdict for an acceptance criterion."""

    def record(number: int, title: str, passed: bool, detail: str) -> bool:
        _CRITERIA[number] = f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
        print(_CRITERIA[number])
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[k])
