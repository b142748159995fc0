import warnings

import numpy as np
import pytest

from trustlds.dynamics import LatentRangeWarning, default_model


@pytest.fixture(autouse=True)
def _quiet_range_warning():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", LatentRangeWarning)
        yield


@pytest.fixture(scope="session")
def model():
    return default_model()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(mod.RESULTS):
        terminalreporter.write_line(line)
