import numpy as np
import pytest

from robustgmm import GaussianMixture


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_spd(rng, d, lo=0.5, hi=2.0):
    q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    return (q * rng.uniform(lo, hi, d)) @ q.T


@pytest.fixture
def two_mix():
    d = 3
    return GaussianMixture.from_params([0.4, 0.6], [np.zeros(d), np.array([3.0, 0, 0])],
                                       [np.eye(d), np.diag([2.0, 1.0, 0.5])])


# -- acceptance report ------------------------------------------------------

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report_line():
    """Record a one-line PASS/FAIL verdict; all lines are echoed in the terminal summary."""
    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"ACCEPTANCE {number}: {'PASS' if ok else 'FAIL'} -- {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
