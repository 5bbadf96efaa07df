import pytest

_criteria: dict[int, tuple[str, str]] = {}


@pytest.fixture
def criterion(record_property):
    """Tag an acceptance test so its outcome is listed in the run summary."""

    def tag(number: int, title: str):
        record_property("criterion", (number, title))

    return tag


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.failed):
        return
    for key, value in report.user_properties:
        if key == "criterion":
            number, title = value
            outcome = "PASS" if report.passed else "FAIL"
            # parametrized checks share a number; any failure marks it failed
            if _criteria.get(number, (title, "PASS"))[1] == "FAIL":
                outcome = "FAIL"
            _criteria[number] = (title, outcome)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        title, outcome = _criteria[number]
        terminalreporter.write_line(f"{outcome} criterion {number}: {title}")
