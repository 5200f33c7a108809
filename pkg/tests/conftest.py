import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=25, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_instance(rng, K=2, N_r=2, N_e=2, M=4, scale=1.0):
    omegas = rng.exponential(scale, size=(K, N_r, M)) + 0.05
    omega_eve = rng.exponential(0.5 * scale, size=(N_e, M))
    return omegas, omega_eve


# Acceptance criteria register one line each here; printed after the run.
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])
