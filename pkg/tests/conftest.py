import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from scmc.model import init_model  # noqa: E402

# acceptance lines collected by test_acceptance.py, printed at session end
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def toy_instance(seed=0, dims=(10, 12, 8), n=8, c=3, hidden=(6, 5)):
    """Small multi-view problem with a randomly initialised model."""
    r = np.random.default_rng(seed)
    views = [r.uniform(0, 1, (n, d)) for d in dims]
    model = init_model(dims, n, c, r, hidden=hidden)
    # move Z and omega away from their tiny/uniform init so every term is active
    for v in range(len(dims)):
        model.params[f"Z{v}"] = r.normal(0, 0.3, (n, n))
    model.params["omega"] = r.normal(0, 0.5, (1, len(dims)))
    return model, views


@pytest.fixture
def toy():
    return toy_instance()
