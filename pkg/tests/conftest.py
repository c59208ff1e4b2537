import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from seroscan import StudyDesign, builtin_dataset

# Kernel calls cost milliseconds, not microseconds; the default deadline
# produces flaky timing failures on loaded machines.
settings.register_profile(
    "seroscan",
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("seroscan")


@pytest.fixture(scope="session")
def sc():
    return builtin_dataset("santa-clara")


@pytest.fixture(scope="session")
def small_design():
    return StudyDesign(n_cal_neg=7, n_cal_pos=5, n_main=9)


def backend_modules():
    """All importable kernel backends, reference implementation first."""
    from seroscan import _evidence_py

    mods = [_evidence_py]
    try:
        from seroscan import _evidence_cy

        mods.append(_evidence_cy)
    except ImportError:
        pass
    return mods


def pytest_report_header(config):
    from seroscan import backend_name

    return f"seroscan kernel backend: {backend_name()}"


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20260813)
