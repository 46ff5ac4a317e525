import re

_results = {}


def pytest_runtest_logreport(report):
    m = re.search(r"test_acceptance\.py::test_criterion_(\d+)", report.nodeid)
    if not m:
        return
    n = int(m.group(1))
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        detail = dict(report.user_properties).get("detail", "")
        _results[n] = (report.outcome, report.duration, detail)


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_results):
        outcome, dur, detail = _results[n]
        flag = "PASS" if outcome == "passed" else "FAIL"
        line = f"criterion {n:2d}: {flag} ({dur:.1f} s)"
        terminalreporter.write_line(line + (f"  {detail}" if detail else ""))
