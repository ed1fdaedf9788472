import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_criteria: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


@pytest.fixture
def measure(request):
    """Record a named measurement that is echoed in the acceptance summary."""

    def record(name, value):
        request.node.user_properties.append((name, value))

    return record


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or not (rep.when == "call" or rep.failed):
        return
    number, title = mark.args
    entry = _criteria.setdefault(number, {"title": title, "ok": True, "notes": []})
    entry["ok"] &= rep.passed
    entry["notes"].extend(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}" for k, v in item.user_properties)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        e = _criteria[number]
        status = "PASS" if e["ok"] else "FAIL"
        notes = f"  [{', '.join(e['notes'])}]" if e["notes"] else ""
        terminalreporter.write_line(f"criterion {number:2d} {status}  {e['title']}{notes}")
