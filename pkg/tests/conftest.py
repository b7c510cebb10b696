import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from censindex.simulation import SimDesign, calibrate_censoring_rate, generate_dataset  # noqa: E402
from censindex.survival import CensoredSample  # noqa: E402


ACCEPTANCE_LINES = []


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: Monte Carlo checks taking more than a few seconds")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def verdict():
    """Record and print one pass/fail line for an acceptance criterion, then assert it."""

    def check(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'} {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return check


def random_sample(rng, n, d=2, p_cens=0.3, ties=False):
    z = rng.integers(0, max(2, n // 2), n).astype(float) if ties else rng.exponential(size=n)
    delta = (rng.random(n) > p_cens).astype(int)
    return CensoredSample(z, delta, rng.normal(size=(n, d)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def sim_sample_200():
    design = SimDesign(n=200, target_p=0.25, reps=1, seed=99)
    return generate_dataset(design, 0, calibrate_censoring_rate(design))
