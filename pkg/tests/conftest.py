import os

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", deadline=None, max_examples=500, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

_ACCEPTANCE: dict[str, tuple[str, str]] = {}


@pytest.fixture
def criterion(request):
    """Record one acceptance line: ``criterion(n, title)`` then ``.detail = ...``."""

    class Recorder:
        def __init__(self):
            self.number = None
            self.title = ""
            self.detail = ""

        def __call__(self, number, title):
            self.number, self.title = number, title
            return self

    rec = Recorder()
    yield rec
    if rec.number is not None:
        report = getattr(request.node, "rep_call", None)
        if report is None:
            status = "ERROR"
        elif report.skipped:
            status = "SKIP"
        else:
            status = "PASS" if report.passed else "FAIL"
        _ACCEPTANCE[f"{rec.number:>2}"] = (status, f"{rec.title}{': ' + rec.detail if rec.detail else ''}")


@pytest.hookimpl(hookwrapper=True, tryfirst=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call" or (rep.when == "setup" and rep.skipped):
        item.rep_call = rep


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_ACCEPTANCE, key=int):
        status, text = _ACCEPTANCE[key]
        terminalreporter.write_line(f"[{status}] criterion {key.strip()}: {text}")
