from __future__ import annotations

import pytest

from pmlife.ingestion import SyncEngine
from pmlife.sources import SimConfig, UniverseSource, generate_lifecycle
from pmlife.storage import Store

_criteria: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n, title = mark.args
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        _criteria[n] = ("PASS" if rep.passed else "FAIL", title)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        status, title = _criteria[n]
        terminalreporter.write_line(f"criterion {n:2d}: {status}  {title}")


@pytest.fixture(scope="session")
def small_universe():
    return generate_lifecycle(SimConfig(seed=21, n_markets=120, dispute_rate=0.3,
                                        withheld_fraction=0.1, delayed_fraction=0.1,
                                        indirect_oracle_fraction=0.2))


@pytest.fixture(scope="session")
def synced_store(small_universe):
    store = Store()
    SyncEngine(store, UniverseSource(small_universe)).run()
    store.materialize_summaries()
    return store
