import pytest

from ersm.ingest import StationRecord


@pytest.fixture
def stations():
    return StationRecord("BOU", 40.137, -105.238, 1682), StationRecord("FRD", 38.21, -77.373, 69)


def pytest_terminal_summary(terminalreporter):
    from helpers import CRITERIA

    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in CRITERIA:
            terminalreporter.write_line(line)
