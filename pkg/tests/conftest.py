import os

import pytest
from hypothesis import HealthCheck, settings

from segmarket.scenarios import build_pniec_scenario

settings.register_profile("default", max_examples=100, deadline=None)
settings.register_profile("ci", max_examples=300, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("quick", max_examples=20, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

_ACCEPTANCE: dict[int, tuple[str, str]] = {}


@pytest.fixture(scope="session")
def pniec():
    return build_pniec_scenario()


def pytest_runtest_logreport(report):
    marker = getattr(report, "acceptance", None)
    if marker is None:
        return
    cid, title = marker
    if report.when == "call" or report.outcome != "passed":
        prev = _ACCEPTANCE.get(cid)
        if prev is None or prev[0] == "PASS":
            _ACCEPTANCE[cid] = ("PASS" if report.outcome == "passed" else "FAIL", title)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    m = item.get_closest_marker("acceptance")
    if m is not None:
        rep.acceptance = (m.kwargs.get("cid", m.args[0] if m.args else 0),
                          m.kwargs.get("title", m.args[1] if len(m.args) > 1 else item.name))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(_ACCEPTANCE):
        status, title = _ACCEPTANCE[cid]
        terminalreporter.write_line(f"AC{cid:<2} {status}  {title}")
