"""Shared fixtures.  Expensive Monte Carlo artifacts are session-scoped so
the module tests and the acceptance gate reuse one simulation each.
"""

import numpy as np
import pytest

from towerlab import maps, tower, symbolic


@pytest.fixture(scope="session")
def lsv03():
    return maps.MapModel("lsv", gamma=0.3)


@pytest.fixture(scope="session")
def lsv04():
    return maps.MapModel("lsv", gamma=0.4)


@pytest.fixture(scope="session")
def lsv05():
    return maps.MapModel("lsv", gamma=0.5)


@pytest.fixture(scope="session")
def hg05():
    return maps.MapModel("hg", gamma=0.5)


@pytest.fixture(scope="session")
def doubling():
    return maps.MapModel("doubling")


@pytest.fixture(scope="session")
def beta3_spec():
    return tower.synthetic_spec(beta=3.0)


@pytest.fixture(scope="session")
def beta3_deep_spec():
    """Deeper height truncation: the tail stays a power law out to ~300."""
    return tower.synthetic_spec(beta=3.0, residual_target=1e-8)


@pytest.fixture(scope="session")
def iid_spec():
    """All-heights-1 spec: the chain is an i.i.d. word sequence."""
    raw = [{"id": 0, "h": 1, "weight": 0.5},
           {"id": 1, "h": 1, "weight": 0.3},
           {"id": 2, "h": 1, "weight": 0.2}]
    return tower.validate_spec(raw)


@pytest.fixture(scope="session")
def small_spec():
    raw = [{"id": 0, "h": 1, "weight": 0.5},
           {"id": 1, "h": 2, "weight": 0.3},
           {"id": 2, "h": 3, "weight": 0.2}]
    return tower.validate_spec(raw)


@pytest.fixture(scope="session")
def periodic_spec():
    raw = [{"id": 0, "h": 2, "weight": 0.5},
           {"id": 1, "h": 4, "weight": 0.5}]
    return tower.validate_spec(raw)


@pytest.fixture(scope="session")
def meeting_samples_deep(beta3_deep_spec):
    """(T, T_star) for 10^6 coupled runs on the deep beta=3 spec."""
    return tower.meeting_times(beta3_deep_spec, master_seed=99,
                               n_runs=1_000_000, n_max=100_000)


@pytest.fixture(scope="session")
def doubling_decomposition(doubling):
    return symbolic.decompose(doubling, depth=8, height_cap=16, n_grid=4096)


@pytest.fixture(scope="session")
def lsv04_decomposition(lsv04):
    return symbolic.decompose(lsv04, depth=6, height_cap=24, n_grid=4096)


def pytest_terminal_summary(terminalreporter):
    """Echo the acceptance suite's one-line-per-criterion results."""
    import _acceptance_log

    if _acceptance_log.LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_acceptance_log.LINES):
            terminalreporter.write_line(line)
