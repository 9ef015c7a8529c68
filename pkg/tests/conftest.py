import json
from pathlib import Path

import numpy as np
import pytest

from trunccox.core import TruncatedDataset

ORACLES = json.loads((Path(__file__).parent / "oracles" / "frozen.json").read_text())


# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running Monte Carlo checks")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: (len(k), k)):
        terminalreporter.write_line(ACCEPTANCE[key])


@pytest.fixture(scope="session")
def oracles():
    return ORACLES


def inf_or(values, sign):
    """Decode JSON ``null`` as an infinite bound."""
    return np.array([sign * np.inf if v is None else v for v in values], dtype=float)


def dataset_from(entry) -> TruncatedDataset:
    return TruncatedDataset(entry["time"], inf_or(entry["left"], -1), inf_or(entry["right"], 1), entry["z"])


def random_truncated(rng, n, p, beta=None, left_frac=0.7, right_frac=0.7):
    """Small doubly truncated dataset: exponential PH times with windows around them.

    Windows are built around each event time, so every row is observable and
    roughly ``left_frac`` / ``right_frac`` of the rows carry a finite bound.
    """
    beta = np.full(p, 0.5) if beta is None else np.asarray(beta, float)
    z = rng.uniform(0, 2, (n, p))
    t = rng.exponential(1.0 / np.exp(z @ beta))
    left = np.where(rng.random(n) < left_frac, t - rng.exponential(0.7, n), -np.inf)
    right = np.where(rng.random(n) < right_frac, t + rng.exponential(0.7, n), np.inf)
    # both bounds present at least once, so the mode is "double"
    left[0] = t[0] - 0.1
    right[1] = t[1] + 0.1
    return TruncatedDataset(t, left, right, z)


def untruncated(rng, n, p, ties=False):
    z = rng.normal(size=(n, p))
    t = rng.exponential(1.0 / np.exp(z @ np.full(p, 0.4)))
    if ties:
        t = np.ceil(t * 4) / 4
    return TruncatedDataset(t, np.full(n, -np.inf), np.full(n, np.inf), z)
