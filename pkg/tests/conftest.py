import pytest

from scenes import ARRAY, catalog

_CRITERIA: list[str] = []


@pytest.fixture(scope="session")
def array():
    return ARRAY


@pytest.fixture(scope="session")
def stems():
    return catalog()


@pytest.fixture
def record():
    """Log one PASS/FAIL line for an acceptance criterion; returns the verdict."""

    def _record(label: str, ok: bool, detail: str) -> bool:
        line = f"[{'PASS' if ok else 'FAIL'}] {label}: {detail}"
        _CRITERIA.append(line)
        print(line)
        return ok

    return _record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in _CRITERIA:
            terminalreporter.write_line(line)
