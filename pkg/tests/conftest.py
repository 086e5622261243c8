from pathlib import Path

import pytest

from uwoc.fading import FadingSpec
from uwoc.link import NoiseBudget, TransmitPulse, build_scenario
from uwoc.water_channel import ImpulseResponse

DATA = Path(__file__).parent / "data"
COASTAL = DATA / "coastal25"

_criteria = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, text): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark and rep.when == "call":
        _criteria.append((mark.args[0], mark.args[1], rep.outcome))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    merged = {}
    for number, text, outcome in _criteria:
        prev = merged.get(number, (text, True))
        merged[number] = (text, prev[1] and outcome == "passed")
    for number in sorted(merged):
        text, ok = merged[number]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {text}")


def load_coastal(M, N):
    return [
        [ImpulseResponse.from_csv(COASTAL / f"h0_{M}x{N}_tx{i}_rx{j}.csv") for j in range(N)]
        for i in range(M)
    ]


def coastal_scenario(M, N, sigma_X=0.4):
    """Frozen 25 m coastal channel at 1 Gbps, 1 W total transmit power."""
    return build_scenario(
        load_coastal(M, N),
        TransmitPulse(1.0, 1e-9, transmitters=M),
        NoiseBudget(),
        FadingSpec.from_sigma(sigma_X),
    )


@pytest.fixture
def coastal():
    return coastal_scenario
