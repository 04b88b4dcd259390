import pytest
from hypothesis import settings

settings.register_profile("suite", deadline=None, max_examples=60, derandomize=True)
settings.load_profile("suite")

_CRITERIA = {}


@pytest.fixture
def detail(request):
    """Attach a one-line measurement to the acceptance summary for this test."""
    def add(text):
        request.node.user_properties.append(("detail", text))
    return add


def pytest_runtest_logreport(report):
    marker = getattr(report, "criterion", None)
    if marker is None:
        return
    if report.when == "call" or report.failed:
        number, title = marker
        notes = [v for k, v in report.user_properties if k == "detail"]
        _CRITERIA[number] = (title, report.passed and report.when == "call", report.duration, notes)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        report.criterion = tuple(marker.args)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, passed, seconds, notes = _CRITERIA[number]
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {title}  ({seconds:.1f}s)"
        if notes:
            line += "  " + "; ".join(notes)
        terminalreporter.write_line(line)
