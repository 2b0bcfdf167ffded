import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from polydecay.errors import DomainError, ResolutionError, UnsupportedError
from polydecay.grid import GridFunction
from polydecay.induced import build_induced
from polydecay.maps import make_family
from polydecay.norms import SeminormParams, ly_probe, osc_seminorm, random_step_function, variation
from polydecay.transfer import ulam_matrix


def test_variation_examples():
    f = GridFunction.indicator(0.25, 0.75, 0.0, 1.0, 64)
    assert variation(f) == 2.0
    assert variation(GridFunction(0.0, 1.0, np.full(10, 3.3))) == 0.0
    n = 1024
    g = GridFunction.from_callable(lambda x: x, 0.0, 1.0, n)
    assert variation(g) == pytest.approx(1.0 - 1.0 / n, abs=1e-12)


def test_osc_examples():
    p = SeminormParams.geometric(0.5, 0.1, 2e-4, 12)
    assert osc_seminorm(GridFunction(0.0, 1.0, np.ones(8192)), p) == 0.0
    f = GridFunction.indicator(0.0, 0.5, 0.0, 1.0, 8192)
    assert osc_seminorm(f, p) == pytest.approx(2 * 0.1 ** 0.5, rel=0.03)
    g = random_step_function(np.random.default_rng(3), 0.0, 1.0, 8192)
    assert osc_seminorm(-3.5 * g, p) == pytest.approx(3.5 * osc_seminorm(g, p), rel=1e-12)


def test_osc_errors():
    p = SeminormParams.geometric(0.5, 0.1, 1e-4, 5)
    with pytest.raises(ResolutionError):
        osc_seminorm(GridFunction(0.0, 1.0, np.ones(100)), p)
    with pytest.raises(UnsupportedError):
        osc_seminorm(GridFunction(0.0, 1.0, np.ones(3), np.array([0, 0.1, 0.5, 1.0])),
                     SeminormParams(1.0, 0.5, (0.5,)))


def test_seminorm_params_validation():
    with pytest.raises(DomainError):
        SeminormParams(1.5, 0.1, (0.1,))
    with pytest.raises(DomainError):
        SeminormParams(0.5, 0.1, (0.05, 0.01, 0.1))
    with pytest.raises(DomainError):
        SeminormParams(0.5, 0.1, (0.01, 0.05))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_variation_subadditive(seed):
    rng = np.random.default_rng(seed)
    f = random_step_function(rng, 0.0, 1.0, 256)
    g = random_step_function(rng, 0.0, 1.0, 256)
    assert variation(f + g) <= variation(f) + variation(g) + 1e-12


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.floats(0.1, 1.0))
def test_osc_dominated_by_variation(seed, alpha):
    rng = np.random.default_rng(seed)
    f = random_step_function(rng, 0.0, 1.0, 1024)
    eps0 = 0.05
    p = SeminormParams.geometric(alpha, eps0, 1.0 / 1024, 8)
    # each jump is seen by at most 2 eps of ball centres (closed balls add one cell)
    w = 1.0 / 1024
    bound = max((2 * e + w) * e ** (-alpha) for e in p.eps_grid) * variation(f)
    assert osc_seminorm(f, p) <= bound + 1e-12
    assert osc_seminorm(f, p) <= 2 * eps0 ** (1 - alpha) * variation(f) * (1 + w / (2 * p.eps_grid[0])) + 1e-12


def test_ly_doubling_indicator():
    op = ulam_matrix(make_family("doubling"), 64)
    f = GridFunction.indicator(0.0, 0.5, 0.0, 1.0, 64)
    pf = op.apply(f)
    assert variation(pf) <= 1e-14
    assert np.allclose(pf.values, 0.5)


def test_ly_probe_zero_function():
    ind = build_induced(make_family("doubling"), 0.0, 1)
    op = ulam_matrix(ind, 32)
    rep = ly_probe(op, trials=20, seed=1, eta=1.0, D=2.0, max_jumps=0)
    assert rep.violations == [] and rep.worst_ratio <= 1.0


def test_ly_probe_pm3_small():
    ind = build_induced(make_family("pm3"), 0.1, 500)
    op = ulam_matrix(ind, 2 ** 10)
    rep = ly_probe(op, trials=100, seed=5)
    assert rep.violations == []
    assert rep.eta_theory == pytest.approx(0.690, abs=1e-3)
    assert rep.eta_hat <= rep.eta_theory and rep.D_hat <= rep.D_theory
    again = ly_probe(op, trials=100, seed=5)
    assert again.as_dict() == rep.as_dict()


def test_ly_probe_quasi_holder():
    ind = build_induced(make_family("pm3"), 0.1, 200)
    op = ulam_matrix(ind, 2 ** 10)
    p = SeminormParams.geometric(0.5, 0.1, 0.9 / 2 ** 9, 6)
    rep = ly_probe(op, norm=p, trials=30, seed=2)
    assert np.isfinite(rep.worst_ratio)
    with pytest.raises(DomainError):
        ly_probe(op, norm="sup", trials=1)
