import sys

import numpy as np
import pytest

from htmstream.sdr import Sdr


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_sdr(rng, width, n):
    return Sdr(width, rng.choice(width, size=n, replace=False))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
