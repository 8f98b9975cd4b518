import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_criteria: dict[int, dict] = {}


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark:
            num, title = mark.args
            _criteria.setdefault(num, {"title": title, "outcomes": []})


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if not mark:
        return
    entry = _criteria[mark.args[0]]
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        if rep.skipped:
            entry["outcomes"].append("SKIPPED")
        elif rep.failed:
            entry["outcomes"].append("FAIL")
        else:
            entry["outcomes"].append("PASS")


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_criteria):
        entry = _criteria[num]
        outs = entry["outcomes"]
        if not outs:
            status = "NOT RUN"
        elif "FAIL" in outs:
            status = "FAIL"
        elif all(o == "SKIPPED" for o in outs):
            status = "SKIPPED"
        else:
            status = "PASS"
        terminalreporter.write_line(f"criterion {num}: {status:<8} {entry['title']}")
