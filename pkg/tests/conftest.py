import numpy as np
import pytest

from onoff_nilm.ingest import ApplianceTrace, HouseholdRecord, synth_household
from onoff_nilm.synth import MixedDatasetSpec, build_mixed_dataset


def constant_trace(device_id, watts, n, period=8.0, start=0.0):
    return ApplianceTrace(device_id, device_id, period, start, np.full(n, watts, dtype=np.float32))


@pytest.fixture(scope="session")
def household():
    return synth_household(10, duration=3 * 86400.0, seed=3)


@pytest.fixture(scope="session")
def small_re(household):
    spec = MixedDatasetSpec("RE", dit=5, ad_max=3, window_len=128, n_samples=60, seed=1,
                            noise_amplitude=10.0)
    return build_mixed_dataset(spec, household)


@pytest.fixture
def constant_household():
    return HouseholdRecord("const", [constant_trace(f"d{i}", 100.0 * (i + 1), 400) for i in range(4)])


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
