import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile(
    "repo", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("repo")


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def random_spd(rng, p, cond=50.0):
    Q, _ = np.linalg.qr(rng.standard_normal((p, p)))
    vals = np.geomspace(1.0, cond, p)
    S = Q @ np.diag(vals) @ Q.T
    return 0.5 * (S + S.T)


def factor_panel(rng, T=80, p=20, m=2, noise=0.3):
    B = rng.standard_normal((p, m))
    F = rng.standard_normal((T, m))
    return F @ B.T + noise * rng.standard_normal((T, p))


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, text): acceptance criterion checked by the test")
    config._criteria = {}


def pytest_runtest_logreport(report):
    marker = getattr(report, "criterion", None)
    if marker is None or (report.when != "call" and report.passed):
        return
    number, text = marker
    crit = _config._criteria
    ok = report.passed and crit.get(number, (text, True))[1]
    crit[number] = (text, ok)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        rep.criterion = tuple(marker.args)


def pytest_sessionstart(session):
    global _config
    _config = session.config


def pytest_terminal_summary(terminalreporter, config):
    crit = getattr(config, "_criteria", {})
    if not crit:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(crit):
        text, ok = crit[number]
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {text}")
