import random
from pathlib import Path

import pytest

from emrshare.ces import TEST_PARAMS
from emrshare.consensus import Consortium, CreditConfig
from emrshare.emr import AccountKeyPair
from emrshare.netsim import NetConfig, Network

ROOT = Path(__file__).resolve().parent.parent
SCENARIOS = ROOT / "scenarios"


def node_keys(n=50, seed=0):
    rng = random.Random(f"keys/{seed}")
    return {f"n{i:02d}": AccountKeyPair.generate(TEST_PARAMS, rng, "node") for i in range(n)}


def consortium(seed=0, n=50, credits=None, byzantine=None, net=None, config=CreditConfig(), keys=None):
    network = Network(net or NetConfig(seed=seed))
    c = Consortium(network, keys or node_keys(n, seed), credits, config, byzantine)
    c.start()
    return c


@pytest.fixture(scope="session")
def thirty_block_run():
    """Fault-free consortium run over the first cycle."""
    c = consortium(seed=0)
    c.net.run_until(299_999)
    return c


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by a test")


_criteria: dict = {}


def pytest_runtest_logreport(report):
    marker = getattr(report, "criterion", None)
    if marker is None or (report.when != "call" and report.passed):
        return
    number, title = marker
    ok, seen = _criteria.get(number, (True, title))
    _criteria[number] = (ok and report.passed, title)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        outcome.get_result().criterion = tuple(marker.args)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        ok, title = _criteria[number]
        terminalreporter.write_line(f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}")
