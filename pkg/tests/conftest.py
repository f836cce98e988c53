import numpy as np
import pytest

from mrrce.numerics import make_rng


@pytest.fixture
def rng():
    return make_rng(12345)


def random_spd(rng, q, jitter=0.5):
    a = rng.standard_normal((q, q))
    return a @ a.T / q + jitter * np.eye(q)


# one summary line per acceptance criterion, printed after the test run
ACCEPTANCE_LINES = []


def record_criterion(number, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
