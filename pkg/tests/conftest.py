"""Collects one verdict line per acceptance criterion and prints them at the end."""

import pytest

_VERDICTS: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def acceptance(request):
    """``acceptance(n, ok, detail)`` records the verdict for criterion ``n``."""
    recorded = []

    def record(n: int, ok: bool, detail: str = "") -> bool:
        _VERDICTS[n] = (bool(ok), detail)
        recorded.append(n)
        return bool(ok)

    yield record
    rep = getattr(request.node, "rep_call", None) or getattr(request.node, "rep_setup", None)
    if rep is not None and rep.failed:
        for n in recorded:
            if _VERDICTS[n][0]:
                _VERDICTS[n] = (False, _VERDICTS[n][1] + " (test failed after recording)")
    if not recorded and rep is not None and rep.failed:
        marker = request.node.get_closest_marker("criterion")
        if marker is not None:
            _VERDICTS[marker.args[0]] = (False, f"error: {rep.longrepr.reprcrash.message if hasattr(rep.longrepr, 'reprcrash') else 'see traceback'}")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    setattr(item, "rep_" + rep.when, rep)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_VERDICTS):
        ok, detail = _VERDICTS[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
