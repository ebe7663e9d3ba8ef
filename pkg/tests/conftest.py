import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from pupilwatch.signal_model import Recording, TaskKind

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def make_recording(n=2500, stim_times=(), pd=None, gx=None, gy=None, task=TaskKind.DPT,
                   participant="P01", session="S1", seed=0):
    """Random-walk-free test recording; channels default to seeded white noise."""
    rng = np.random.default_rng(seed)
    pd = 4.0 + 0.1 * rng.standard_normal(n) if pd is None else np.asarray(pd, float)
    gx = 10.0 * rng.standard_normal(n) if gx is None else np.asarray(gx, float)
    gy = 10.0 * rng.standard_normal(n) if gy is None else np.asarray(gy, float)
    return Recording(participant, session, task, pd, gx, gy, np.asarray(stim_times, float))


@pytest.fixture
def recording_factory():
    return make_recording


# acceptance criteria register here and are summarized after the run
ACCEPTANCE_RESULTS = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_RESULTS):
        title, ok, detail = ACCEPTANCE_RESULTS[k]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {k:>2}. {title}: {detail}")
