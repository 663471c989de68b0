from pathlib import Path

import numpy as np
import pytest

from epipinn.synthetic import synthetic_dataset

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def fixtures_dir():
    return FIXTURES


@pytest.fixture(scope="session")
def synth60():
    return synthetic_dataset(n_weeks=60)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance gate report ------------------------------------------------------

GATE_LINES = []


@pytest.fixture
def gate(request):
    """Record one pass/fail line for an acceptance criterion."""
    def record(criterion, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {detail}"
        GATE_LINES.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if GATE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in GATE_LINES:
            terminalreporter.write_line(line)
