import pytest

_RESULTS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by a test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    num, title = mark.args
    if rep.when == "call" or (rep.when == "setup" and (rep.failed or rep.skipped)):
        status = "PASS" if rep.passed else "SKIP" if rep.skipped else "FAIL"
        prev = _RESULTS.get(num, (None, title))[0]
        # a criterion spread over several tests passes only if all of them do
        if prev in (None, "PASS") or status == "FAIL":
            _RESULTS[num] = (status, title)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_RESULTS):
        status, title = _RESULTS[num]
        terminalreporter.write_line(f"[{status}] criterion {num}: {title}")
