import numpy as np
import pytest

from polydecay.induced import build_induced
from polydecay.maps import make_family
from polydecay.transfer import fixed_density, ulam_matrix


def bisect(f, lo, hi, iters=200):
    """Plain bisection for an increasing f with f(lo) <= 0 <= f(hi)."""
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if f(mid) < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@pytest.fixture(scope="session")
def pm3():
    return make_family("pm3")


@pytest.fixture(scope="session")
def doubling():
    return make_family("doubling")


@pytest.fixture(scope="session")
def pm3_ind(pm3):
    return build_induced(pm3, 0.1, 3000)


@pytest.fixture(scope="session")
def pm3_small(pm3):
    return build_induced(pm3, 0.1, 200)


@pytest.fixture(scope="session")
def pm3_op10(pm3_ind):
    return ulam_matrix(pm3_ind, 2 ** 10)


@pytest.fixture(scope="session")
def pm3_h10(pm3_op10):
    return fixed_density(pm3_op10, tol=1e-14)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(RESULTS, key=lambda k: int(k.split()[0][1:])):
        ok, text = RESULTS[key]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} {key}: {text}")
