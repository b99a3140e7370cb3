import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, max_examples=40,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_LINES:
        terminalreporter.write_line(line)


@pytest.fixture
def criterion():
    """Record one acceptance line, then fail the test if the check did not hold."""
    def record(tag, ok, detail):
        ACCEPTANCE_LINES.append(f"[{'PASS' if ok else 'FAIL'}] {tag}: {detail}")
        return bool(ok)
    return record


@pytest.fixture(scope="session")
def lorenz_long():
    """10^5 Lorenz samples at dt = 0.1 after a 10^4-sample transient."""
    from delaycast.dynsys import simulate_lorenz
    return simulate_lorenz(n_samples=100_000, sample_dt=0.1, transient_discard=10_000, seed=0)


@pytest.fixture(scope="session")
def lorenz_short():
    from delaycast.dynsys import simulate_lorenz
    return simulate_lorenz(n_samples=6000, sample_dt=0.1, transient_discard=1000, seed=11)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
