import sys

import numpy as np
import pytest

from resistrade import OUParams, TimeGrid, alpha_closed_form, simulate_mu


@pytest.fixture(scope="session")
def det_alpha():
    """Deterministic alpha on the default grid (sigma = 0)."""
    p = OUParams(sigma=0.0)
    g = TimeGrid(1.0, 100)
    return alpha_closed_form(p, simulate_mu(p, g, 1))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(mod.RESULTS, key=lambda s: int(s.split()[1].rstrip("ab"))):
            terminalreporter.write_line(line)
