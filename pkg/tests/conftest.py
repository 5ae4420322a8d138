from __future__ import annotations

import pytest

_RESULTS: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number and title")


@pytest.fixture
def measured(request):
    """Record a short measurement string shown next to the criterion verdict."""
    def record(text: str) -> None:
        request.node.user_properties.append(("measured", text))
    return record


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n, title = mark.args
    entry = _RESULTS.setdefault(n, {"title": title, "ok": True, "seen": False, "measured": []})
    if rep.when == "call" or rep.failed:
        entry["seen"] = True
        entry["ok"] = entry["ok"] and rep.passed
    if rep.when == "teardown":
        entry["measured"] = [v for k, v in item.user_properties if k == "measured"]


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(_RESULTS):
        e = _RESULTS[n]
        verdict = "PASS" if e["ok"] and e["seen"] else "FAIL"
        extra = f"  [{'; '.join(e['measured'])}]" if e["measured"] else ""
        tr.write_line(f"{verdict} criterion {n:2d}: {e['title']}{extra}")
