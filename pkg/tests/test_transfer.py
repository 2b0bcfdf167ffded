import math

import numpy as np
import pytest
import scipy.sparse.linalg as spla
from hypothesis import given, settings, strategies as st

from polydecay.errors import ContractError, DomainError, RangeError
from polydecay.grid import GridFunction
from polydecay.induced import build_induced, d_sequence, return_time_masses, tail_measure
from polydecay.maps import make_family
from polydecay.norms import random_step_function
from polydecay.transfer import (R_of_z, R_of_z_bound, extend_density, extract_Rn, fixed_density,
                                fixed_density_residual, full_ulam, leakage_bound, read_coo, reconstruct,
                                renewal_check, rn_norm_probe, spectral_gap, twisted_min_sv, ulam_matrix,
                                write_coo)


@pytest.fixture(scope="module")
def dbl_ind():
    return build_induced(make_family("doubling"), 0.0, 1)


def test_doubling_two_cells(doubling):
    op = ulam_matrix(doubling, 2)
    np.testing.assert_allclose(op.matrix.toarray(), [[0.5, 0.5], [0.5, 0.5]], atol=1e-15)


@pytest.mark.parametrize("n", [7, 64, 1000])
def test_row_sums_full_maps(pm3, doubling, n):
    for tmap in (pm3, doubling, make_family("affine", k=3), make_family("lsv")):
        op = ulam_matrix(tmap, n)
        assert np.max(np.abs(op.row_sums() - 1)) <= 1e-12
        assert np.all(op.vals >= 0)


def test_row_sums_induced(pm3_op10):
    assert np.max(np.abs(pm3_op10.row_sums() - 1)) <= 1e-12


def test_tau_one_column_mass(pm3_ind, pm3_op10):
    # uniform source mass restricted to tau = 1 pieces equals nu^(tau = 1)
    op = pm3_op10
    keep = op.tau == 1
    w = op.widths[op.rows[keep]]
    mass = np.sum(w * op.vals[keep]) / op.measure
    expect = tail_measure(pm3_ind, 0) - tail_measure(pm3_ind, 1)
    assert mass == pytest.approx(expect, abs=1e-8)


@pytest.mark.parametrize("name,kw", [("doubling", {}), ("affine", {"k": 3})])
def test_fixed_density_uniform(name, kw):
    op = ulam_matrix(make_family(name, **kw), 512)
    h = fixed_density(op)
    np.testing.assert_allclose(h.values, 1.0, atol=1e-12)


def test_fixed_density_pm3(pm3_op10, pm3_h10):
    h = pm3_h10
    assert np.all(h.values >= 0)
    assert np.sum(h.values * h.widths) == pytest.approx(pm3_op10.measure, rel=1e-14)
    assert fixed_density_residual(pm3_op10, h) <= 1e-12
    assert h.values.max() / h.values.min() < 10


def test_fixed_density_refinement_stable(pm3_ind):
    top = []
    for n in (2 ** 12, 2 ** 14):
        h = fixed_density(ulam_matrix(pm3_ind, n), tol=1e-14)
        top.append(h.values.max())
    assert abs(top[1] / top[0] - 1) <= 0.05


def test_extract_Rn_doubling(dbl_ind):
    op = ulam_matrix(dbl_ind, 16)
    assert abs(extract_Rn(op, 1) - op.matrix).max() == 0
    assert extract_Rn(op, 2).nnz == 0
    with pytest.raises(RangeError):
        extract_Rn(op, 0)
    with pytest.raises(ContractError):
        extract_Rn(ulam_matrix(make_family("doubling"), 4), 1)


def test_Rn_sum_reconstructs(pm3_op10):
    op = pm3_op10
    total = sum(extract_Rn(op, int(n)) for n in np.unique(op.tau))
    assert abs(total - op.matrix).max() <= leakage_bound(op) + 1e-15
    part = reconstruct(op, 50)
    assert abs(part - op.matrix).max() <= leakage_bound(op, 50) + 1e-15
    rm = sum(extract_Rn(op, int(n), mode="rowmask") for n in np.unique(op.cell_tau))
    assert abs(rm - op.matrix).max() <= leakage_bound(op, mode="rowmask") + 1e-15


def test_R_of_z_endpoints(pm3_op10, dbl_ind):
    op = pm3_op10
    assert abs(R_of_z(op, 1.0) - op.matrix).max() <= 1e-15
    assert R_of_z(op, 0.0).count_nonzero() == 0
    dop = ulam_matrix(dbl_ind, 2)
    np.testing.assert_allclose(R_of_z(dop, -1.0).toarray(), -dop.matrix.toarray())
    assert twisted_min_sv(dop, math.pi) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(DomainError):
        R_of_z(op, 1.5)


def test_R_of_z_truncation_bound(pm3_op10):
    op, z = pm3_op10, 0.9
    diff = R_of_z(op, z) - R_of_z(op, z, 20)
    assert np.abs(diff).sum(axis=1).max() <= R_of_z_bound(op, z, 20) + 1e-15


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 1), st.floats(0, 2 * math.pi), st.integers(0, 2 ** 31 - 1))
def test_R_of_z_contracts_l1(r, theta, seed):
    op = _op_small()
    z = r * complex(math.cos(theta), math.sin(theta))
    f = random_step_function(np.random.default_rng(seed), op.lo, op.hi, op.n_cells)
    m = f.values * op.widths
    out = R_of_z(op, z).T @ m
    assert np.abs(out).sum() <= abs(z) * np.abs(m).sum() * (1 + 1e-12) + 1e-300


_SMALL = {}


def _op_small():
    if not _SMALL:
        _SMALL["op"] = ulam_matrix(build_induced(make_family("pm3"), 0.1, 300), 256)
    return _SMALL["op"]


def test_twisted_sv_at_zero(pm3_op10):
    assert twisted_min_sv(pm3_op10, 0.0) <= 1e-10
    with pytest.raises(DomainError):
        twisted_min_sv(pm3_op10, 7.0)


def test_twisted_sv_positive_off_zero():
    op = _op_small()
    vals = [twisted_min_sv(op, 2 * math.pi * k / 16) for k in range(1, 16)]
    assert min(vals) > 0.05


def test_renewal_doubling(dbl_ind):
    rep = renewal_check(ulam_matrix(dbl_ind, 32), ulam_matrix(make_family("doubling"), 32), 0.5, 30)
    assert rep.discrepancy <= 1e-8
    rep0 = renewal_check(ulam_matrix(dbl_ind, 8), ulam_matrix(make_family("doubling"), 8), 0.0, 5)
    assert rep0.discrepancy == 0.0


def test_renewal_pm3(pm3):
    ind = build_induced(pm3, 0.1, 40)
    rep = renewal_check(ulam_matrix(ind, 2 ** 8), full_ulam(ind, 2 ** 8), 0.5, 40)
    assert rep.ok
    rep_c = renewal_check(ulam_matrix(ind, 2 ** 7), full_ulam(ind, 2 ** 7), 0.4j, 30)
    assert rep_c.ok
    with pytest.raises(DomainError):
        renewal_check(ulam_matrix(ind, 8), full_ulam(ind, 8), 1.0, 5)


def test_spectral_gap_examples(doubling, pm3_op10, pm3_h10):
    assert spectral_gap(ulam_matrix(doubling, 2)).modulus == 0.0
    rep = spectral_gap(ulam_matrix(make_family("affine", k=3), 729))
    assert rep.modulus < 0.67
    g = spectral_gap(pm3_op10, pm3_h10)
    assert g.modulus < 1 - 1e-3 and g.converged


def test_spectral_gap_against_eigensolver(pm3_op10, pm3_h10):
    vals = spla.eigs(pm3_op10.matrix_t.astype(complex), k=6, which="LM", return_eigenvectors=False, tol=1e-12)
    mods = np.sort(np.abs(vals))[::-1]
    assert mods[0] == pytest.approx(1.0, abs=1e-10)
    g = spectral_gap(pm3_op10, pm3_h10)
    assert g.modulus == pytest.approx(mods[1], rel=0.02)


def test_rn_norm_tracks_d_sequence(pm3_ind, pm3_op10):
    ns = np.array([10, 20, 40, 80, 120, 160, 200])
    ratio = rn_norm_probe(pm3_op10, ns, trials=10) / d_sequence(pm3_ind)[ns]
    c_r = ratio.max()
    assert np.all(ratio <= c_r) and ratio.min() >= c_r / 1.5


def test_extend_density_doubling(dbl_ind):
    op = ulam_matrix(dbl_ind, 64)
    h = fixed_density(op)
    ext = extend_density(dbl_ind.map, dbl_ind, h, 10)
    assert ext.mu_Xhat == 1.0
    np.testing.assert_allclose(ext.h.values, h.values)


def test_extend_density_pm3(pm3_ind, pm3_h10):
    ext = extend_density(pm3_ind.map, pm3_ind, pm3_h10, 400)
    assert ext.h.integral == pytest.approx(1.0, abs=1e-10)
    assert ext.return_defect <= 5 * (ext.tail_mass + 1e-12)
    assert 0.5 < ext.mu_Xhat < 1


def test_density_grows_toward_zero_under_refinement(pm3):
    ind = build_induced(pm3, 0.1, 200)
    first = []
    for n in (128, 256, 512):
        h_hat = fixed_density(ulam_matrix(ind, n), tol=1e-14)
        ext = extend_density(pm3, ind, h_hat, 3000, refine="uniform")
        assert ext.h.integral == pytest.approx(1.0, abs=1e-10)
        first.append(ext.h.values[0])
    assert first[0] < first[1] < first[2]


def test_coo_round_trip(tmp_path, pm3_op10):
    path = tmp_path / "m.coo"
    write_coo(path, pm3_op10.matrix)
    back = read_coo(path)
    assert back.shape == pm3_op10.matrix.shape
    assert abs(back - pm3_op10.matrix).max() == 0.0
