import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from polydecay.decay import (DecaySeries, covariance_mc, covariance_operator, covariance_series, f_beta_envelope,
                             fit_rate, leading_term_series, predicted_leading_term, write_series_csv,
                             xhat_density)
from polydecay.errors import ContractError, DomainError, InsufficientDataError, RangeError
from polydecay.grid import GridFunction
from polydecay.induced import build_induced, mu_xhat_kac
from polydecay.maps import make_family
from polydecay.transfer import extend_density, fixed_density, full_ulam, ulam_matrix


@pytest.fixture(scope="module")
def dbl14():
    op = ulam_matrix(make_family("doubling"), 2 ** 14)
    h = op.grid_function(np.ones(op.n_cells))
    f = GridFunction.from_callable(lambda x: x - 0.5, 0.0, 1.0, 2 ** 14)
    return op, h, f


@pytest.fixture(scope="module")
def pm3_full():
    pm3 = make_family("pm3")
    ind = build_induced(pm3, 0.1, 400)
    op = ulam_matrix(ind, 2 ** 10)
    h_hat = fixed_density(op, tol=1e-14)
    fop = full_ulam(ind, 2 ** 10, depth=400)
    ext = extend_density(pm3, ind, h_hat, 400, full_op=fop)
    return pm3, ind, op, h_hat, fop, ext


def test_doubling_analytic_oracle(dbl14):
    op, h, f = dbl14
    cov = covariance_series(op, h, f, f, range(9))
    for n in range(9):
        exact = 1.0 / (12 * 2 ** n)
        assert abs(cov[n] / exact - 1) <= 0.05
    assert cov[1] == pytest.approx(0.0416667, rel=0.05)
    assert cov[8] == pytest.approx(3.2552e-4, rel=0.05)


def test_variance_matches_quadrature(dbl14):
    op, h, f = dbl14
    var = covariance_operator(op, h, f, f, 0)
    w = op.widths
    direct = np.sum(f.values ** 2 * w) - np.sum(f.values * w) ** 2
    assert var == pytest.approx(direct, abs=1e-10)


def test_constant_observable_cancels():
    # with X^ = X a constant f has Cov(f, g o T^n) = 0 for every g and n
    rng = np.random.default_rng(4)
    for tmap in (make_family("doubling"), make_family("affine", k=3)):
        ind = build_induced(tmap, 0.0, 1)
        for op in (ulam_matrix(ind, 300), ulam_matrix(tmap, 300)):
            h = fixed_density(op)
            one = op.grid_function(np.ones(op.n_cells))
            g = op.grid_function(rng.uniform(-1, 1, op.n_cells))
            cov = covariance_series(op, h, one, g, [0, 1, 7, 40])
            assert np.max(np.abs(cov)) <= 1e-12


def test_support_contract(pm3_full):
    _, _, _, _, fop, ext = pm3_full
    bad = fop.grid_function(np.ones(fop.n_cells))
    with pytest.raises(ContractError):
        covariance_operator(fop, ext.h, bad, bad, 1)
    with pytest.raises(RangeError):
        covariance_series(fop, ext.h, bad, bad, [-1])


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.floats(-3, 3), st.floats(-3, 3))
def test_bilinearity(seed, a, b):
    op, h = _small_dbl()
    rng = np.random.default_rng(seed)
    f1, f2, g = (op.grid_function(rng.uniform(-1, 1, op.n_cells)) for _ in range(3))
    ns = [0, 1, 3]
    lhs = covariance_series(op, h, f1 * a + f2 * b, g, ns)
    rhs = a * covariance_series(op, h, f1, g, ns) + b * covariance_series(op, h, f2, g, ns)
    assert np.max(np.abs(lhs - rhs)) <= 1e-12
    lhs = covariance_series(op, h, g, f1 * a + f2 * b, ns)
    rhs = a * covariance_series(op, h, g, f1, ns) + b * covariance_series(op, h, g, f2, ns)
    assert np.max(np.abs(lhs - rhs)) <= 1e-12


_DBL = {}


def _small_dbl():
    if not _DBL:
        op = ulam_matrix(make_family("affine", k=3), 243)
        _DBL["v"] = (op, op.grid_function(np.ones(op.n_cells)))
    return _DBL["v"]


def test_induced_and_full_covariance_agree(pm3_full):
    _, ind, op, h_hat, fop, ext = pm3_full
    f = GridFunction.indicator(0.55, 0.95, op.lo, op.hi, edges=op.edges)
    hx = xhat_density(h_hat, ext.mu_Xhat)
    ff = GridFunction.indicator(0.55, 0.95, 0.0, 1.0, edges=fop.edges)
    ns = [0, 1, 5, 20, 60]
    a = covariance_series(op, hx, f, f, ns)
    b = covariance_series(fop, ext.h, ff, ff, ns)
    np.testing.assert_allclose(a, b, rtol=1e-3, atol=1e-6)


def test_mc_doubling_oracle():
    f = lambda x: x - 0.5
    r = covariance_mc(make_family("doubling"), f, f, 3, samples=10 ** 7, seed=7)
    assert abs(r.estimate - 1 / 96) <= 3 * r.stderr
    assert r.estimate == pytest.approx(0.0104167, abs=5e-4)


def test_mc_determinism_and_constant():
    tmap = make_family("pm3")
    g = lambda x: np.sin(7 * x)
    a = covariance_mc(tmap, g, g, 2, samples=20000, seed=11)
    b = covariance_mc(tmap, g, g, 2, samples=20000, seed=11)
    assert (a.estimate, a.stderr, a.restarts) == (b.estimate, b.stderr, b.restarts)
    c = covariance_mc(tmap, lambda x: np.full_like(x, 2.5), g, 2, samples=20000, seed=11)
    assert abs(c.estimate) <= 3 * c.stderr + 1e-15


def test_mc_errors():
    f = lambda x: x
    with pytest.raises(DomainError):
        covariance_mc(make_family("doubling"), f, f, 1, samples=10)
    with pytest.raises(RangeError):
        covariance_mc(make_family("doubling"), f, f, -1)


def test_operator_matches_mc_pm3(pm3_full):
    pm3, _, _, _, fop, ext = pm3_full
    ff = GridFunction.indicator(0.55, 0.95, 0.0, 1.0, edges=fop.edges)
    cov = covariance_series(fop, ext.h, ff, ff, range(11))
    fc = lambda x: ((x >= 0.55) & (x <= 0.95)).astype(float)
    for n in (0, 1, 2, 5, 10):
        r = covariance_mc(pm3, fc, fc, n, samples=4 * 10 ** 6, seed=3)
        assert abs(cov[n] - r.estimate) <= 3 * r.stderr


@pytest.fixture(scope="module")
def pm3_deep():
    # the truncated sum bends down near n_max, so go well past the fit window
    ind = build_induced(make_family("pm3"), 0.1, 20000)
    return ind, fixed_density(ulam_matrix(ind, 2 ** 10), tol=1e-14)


def test_leading_term_properties(pm3_deep):
    pm3_ind, pm3_h10 = pm3_deep
    mu_x = mu_xhat_kac(pm3_ind, pm3_h10)
    f = GridFunction.indicator(0.55, 0.95, 0.1, 1.0, edges=pm3_h10.edges)
    s, bound = leading_term_series(pm3_ind, pm3_h10, mu_x, f, f)
    assert np.all(np.diff(s) <= 0) and np.all(s >= 0)
    assert math.isfinite(bound) and bound > 0
    n = np.arange(20, 1001)
    assert fit_rate(n, s[n]).slope == pytest.approx(-1.0, abs=0.1)
    val, _ = predicted_leading_term(pm3_ind, pm3_h10, mu_x, f, f, 30)
    assert val == s[30]
    with pytest.raises(RangeError):
        predicted_leading_term(pm3_ind, pm3_h10, mu_x, f, f, pm3_ind.n_max)


def test_leading_term_vanishes_for_mean_zero(pm3_ind, pm3_h10):
    mu_x = mu_xhat_kac(pm3_ind, pm3_h10)
    hx = xhat_density(pm3_h10, mu_x)
    g = GridFunction.indicator(0.55, 0.95, 0.1, 1.0, edges=pm3_h10.edges)
    f = GridFunction.indicator(0.2, 0.4, 0.1, 1.0, edges=pm3_h10.edges)
    w = pm3_h10.widths
    f = f - f.with_values(np.full(f.n_cells, np.sum(f.values * hx.values * w) / np.sum(hx.values * w)))
    s, _ = leading_term_series(pm3_ind, pm3_h10, mu_x, f, g)
    assert np.max(np.abs(s)) <= 1e-14


def test_f_beta_examples():
    assert f_beta_envelope(10, 3) == 1e-3
    assert f_beta_envelope(10, 2) == math.log(10) / 100
    assert f_beta_envelope(10, 2) == pytest.approx(0.02302585, abs=1e-8)
    assert f_beta_envelope(10, 1.5) == 0.1
    with pytest.raises(DomainError):
        f_beta_envelope(10, 1.0)
    with pytest.raises(RangeError):
        f_beta_envelope(1, 3)


def test_fit_rate_examples():
    n = np.arange(1, 200)
    fit = fit_rate(n, 7.0 * n ** -2.0)
    assert abs(fit.slope + 2.0) <= 1e-12 and fit.max_abs_residual <= 1e-12
    n = np.arange(100, 1001)
    assert -1.02 < fit_rate(n, (1 + 1 / n) / n).slope < -0.98
    alt = (-1.0) ** n / n
    assert fit_rate(n, alt).n_points == np.sum(alt > 0)
    with pytest.raises(InsufficientDataError):
        fit_rate(np.arange(1, 9), (-1.0) ** np.arange(1, 9))
    series = DecaySeries(list(range(1, 50)), list(np.arange(1, 50) ** -1.5))
    assert fit_rate(series).slope == pytest.approx(-1.5, abs=1e-12)


def test_decay_series_contract():
    with pytest.raises(ContractError):
        DecaySeries([1, 1, 2], [1.0, 2.0, 3.0])
    with pytest.raises(ContractError):
        DecaySeries([1, 2], [1.0, 2.0], method="monte_carlo")


def test_write_series_csv(tmp_path):
    path = tmp_path / "s.csv"
    write_series_csv(path, {"n": [1, 2], "cov": [np.float64(0.5), 0.25]})
    assert path.read_text() == "n,cov\n1,0.5\n2,0.25\n"
