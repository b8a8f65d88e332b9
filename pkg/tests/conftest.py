"""Per-criterion roll-up for the acceptance suite.

Tests marked ``@pytest.mark.acceptance(number, title, seconds)`` are grouped
by number. A criterion passes when every test in its group passes and the
summed call time stays within ``seconds``. One line per criterion is printed
at the end of the run; values attached with ``record_property("measured", ...)``
are echoed on that line.
"""
from collections import defaultdict

import pytest

_meta = {}
_results = defaultdict(list)


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title, seconds): acceptance criterion")


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("acceptance")
        if mark:
            _meta[item.nodeid] = mark.args


def pytest_runtest_logreport(report):
    args = _meta.get(report.nodeid)
    if args is None:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        measured = [v for k, v in report.user_properties if k == "measured"]
        _results[args[0]].append((report, measured))


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    titles = {args[0]: args[1:] for args in _meta.values()}
    terminalreporter.section("acceptance criteria")
    for number in sorted(_results):
        title, limit = titles[number]
        entries = _results[number]
        elapsed = sum(r.duration for r, _ in entries)
        failed = [r.nodeid.split("::")[-1] for r, _ in entries if not r.passed]
        on_time = elapsed <= limit
        verdict = "PASS" if not failed and on_time else "FAIL"
        line = f"{verdict}  {number}. {title}  ({elapsed:.2f}s / {limit}s limit)"
        measured = [m for _, ms in entries for m in ms]
        if measured:
            line += "  measured: " + "; ".join(map(str, measured))
        if failed:
            line += f"  failing: {', '.join(failed)}"
        if not on_time:
            line += "  over time limit"
        terminalreporter.write_line(line)
