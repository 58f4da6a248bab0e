"""Collects the outcome of every acceptance check and prints one PASS/FAIL
line per numbered check at the end of the session."""

import pytest

_RESULTS: dict[int, dict] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    number, title = marker.args
    entry = _RESULTS.setdefault(number, {"title": title, "outcomes": [], "details": []})
    if report.when == "call" or report.outcome != "passed":
        entry["outcomes"].append(report.outcome)
    if report.when == "call":
        entry["details"] += [v for k, v in item.user_properties if k == "detail"]


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance")
    for number in sorted(_RESULTS):
        entry = _RESULTS[number]
        outs = entry["outcomes"]
        if "failed" in outs:
            status = "FAIL"
        elif outs and all(o == "skipped" for o in outs):
            status = "SKIP"
        else:
            status = "PASS"
        detail = "; ".join(entry["details"])
        terminalreporter.write_line(f"{status} [{number}] {entry['title']}" + (f": {detail}" if detail else ""))
