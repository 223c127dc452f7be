from __future__ import annotations

import pytest
from hypothesis import settings

settings.register_profile("demm", deadline=None, derandomize=True, print_blob=True)
settings.load_profile("demm")

_criteria: dict[str, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(id, title): acceptance criterion covered by the test")


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    marker = getattr(report, "criterion", None)
    if marker is None:
        return
    cid, title = marker
    row = _criteria.setdefault(cid, {"title": title, "passed": True, "failed": []})
    if report.outcome != "passed":
        row["passed"] = False
        row["failed"].append(report.nodeid.split("::")[-1])


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is not None:
        report.criterion = (str(mark.args[0]), mark.args[1])


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")

    def order(cid: str):
        head = cid.rstrip("abcdefgh")
        return (int(head) if head.isdigit() else 99, cid)

    for cid in sorted(_criteria, key=order):
        row = _criteria[cid]
        status = "PASS" if row["passed"] else "FAIL"
        extra = f"  (failing: {', '.join(row['failed'])})" if row["failed"] else ""
        terminalreporter.write_line(f"criterion {cid:<3} {status}  {row['title']}{extra}")
