import time

import pytest

# nodeid -> {"number", "title", "outcome", "seconds", "details"}
_CRITERIA = {}


@pytest.fixture
def report(request):
    """Attach human-readable measurements to the criterion summary line."""
    entry = _CRITERIA.setdefault(request.node.nodeid, {"details": []})
    return entry["details"].append


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_call(item):
    t0 = time.perf_counter()
    yield
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        entry = _CRITERIA.setdefault(item.nodeid, {"details": []})
        entry["seconds"] = time.perf_counter() - t0


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    rep = outcome.get_result()
    entry = _CRITERIA.setdefault(item.nodeid, {"details": []})
    entry["number"], entry["title"] = marker.args
    if rep.when == "call" or (rep.when == "setup" and rep.failed):
        entry["outcome"] = "PASS" if rep.passed else "FAIL"


def pytest_terminal_summary(terminalreporter):
    done = [e for e in _CRITERIA.values() if "outcome" in e]
    if not done:
        return
    tr = terminalreporter
    tr.write_sep("=", "acceptance criteria")
    for e in sorted(done, key=lambda e: e["number"]):
        secs = f" ({e['seconds']:.1f} s)" if "seconds" in e else ""
        tr.write_line(f"criterion {e['number']}: {e['outcome']}  {e['title']}{secs}")
        for line in e["details"]:
            tr.write_line(f"    {line}")
