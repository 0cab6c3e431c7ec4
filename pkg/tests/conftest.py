import re

_criteria = {}


def pytest_runtest_logreport(report):
    m = re.search(r"test_criterion_(\d+)", report.nodeid)
    if not m or not (report.when == "call" or report.failed):
        return
    detail = dict(report.user_properties).get("measured", "")
    _criteria[int(m.group(1))] = ("PASS" if report.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        verdict, detail = _criteria[n]
        terminalreporter.write_line(f"criterion {n}: {verdict}  {detail}".rstrip())
