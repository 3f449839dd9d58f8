import pytest

_RESULTS: dict[int, dict] = {}


@pytest.fixture
def report(request):
    """Attach a measured value to the current acceptance criterion line."""
    notes: list[str] = []
    request.node.user_properties.append(("notes", notes))
    return notes.append


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        n, title = marker.args
        entry = _RESULTS.setdefault(n, {"title": title, "ok": True, "notes": []})
        entry["ok"] = entry["ok"] and rep.passed
        entry["notes"].extend(dict(item.user_properties).get("notes", []))


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_RESULTS):
        e = _RESULTS[n]
        status = "PASS" if e["ok"] else "FAIL"
        notes = f" ({'; '.join(e['notes'])})" if e["notes"] else ""
        terminalreporter.write_line(f"[{status}] {n}. {e['title']}{notes}")
