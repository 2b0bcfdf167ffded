"""First-return map on X^ = [z, 1] and its return-time partition.

A cell ``(j, i)`` collects the points of branch ``j`` that spend exactly
``i`` steps in ``J = [0, z)`` before coming back, so ``tau = i + 1``.  For
``j >= 2`` and ``i >= 1`` the cell is ``T_j^{-1}[z_i, z_{i-1}]`` where
``z_0 = z`` and ``z_i = T_1^{-1} z_{i-1}``.  The partition is cut at
``i = n_max``; the unresolved preimages of ``[0, z_{n_max})`` are kept as
slivers and counted with ``tau = n_max + 1`` (a lower bound).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConstructionError, RangeError
from .grid import GridFunction
from .maps import BranchMap, invert_branch


def pullback_sequence(tmap: BranchMap, z: float, n_max: int) -> np.ndarray:
    """z_0 = z, z_n = T_1^{-1}(z_{n-1}); length n_max + 1."""
    if n_max < 0:
        raise RangeError("n_max must be >= 0")
    b1 = tmap.branch(1)
    out = np.empty(n_max + 1)
    out[0] = z
    for n in range(1, n_max + 1):
        out[n] = invert_branch(b1, out[n - 1])
    return out


@dataclass
class InducedSystem:
    """Return-time partition of X^ = [z, 1] (arrays are one entry per cell)."""

    map: BranchMap
    z: float
    n_max: int
    pullbacks: np.ndarray
    j: np.ndarray
    i: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    d: np.ndarray
    sliver_j: np.ndarray
    sliver_lo: np.ndarray
    sliver_hi: np.ndarray
    d_rigorous: bool = True
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def tau(self) -> np.ndarray:
        return self.i + 1

    @property
    def measure(self) -> float:
        """Lebesgue measure of X^."""
        return 1.0 - self.z

    @property
    def n_cells(self) -> int:
        return self.lo.size

    @property
    def tail_bound(self) -> float:
        """Total length of the unresolved slivers."""
        return float(np.sum(self.sliver_hi - self.sliver_lo))

    @property
    def tau_lump(self) -> int:
        return self.n_max + 1

    def lengths(self) -> np.ndarray:
        return self.hi - self.lo

    def cell_of(self, x):
        """Index of the cell containing each x (-1 for slivers / outside)."""
        x = np.asarray(x, dtype=float)
        order = np.argsort(self.lo)
        lo, hi = self.lo[order], self.hi[order]
        k = np.searchsorted(lo, x, side="right") - 1
        ok = (k >= 0) & (x < hi[np.clip(k, 0, None)])
        ok |= (k >= 0) & (x == 1.0) & (hi[np.clip(k, 0, None)] == 1.0)
        return np.where(ok, order[np.clip(k, 0, None)], -1)


def _jet(tmap: BranchMap, j, i, x):
    """Derivative F' and distortion F''/F'^2 of F = T_1^i o T_j at x.

    Uses F''/F'^2 = sum_k [T''/T'^2](y_k) (T^{k+1})'(x) / (T^{i+1})'(x)
    along y_0 = x, y_{k+1} = T(y_k).  Also returns F(x).
    """
    j = np.asarray(j)
    i = np.asarray(i)
    y = np.array(x, dtype=float, copy=True)
    prod = np.ones_like(y)
    acc = np.zeros_like(y)
    b1 = tmap.branch(1)
    for jj in np.unique(j):
        m = j == jj
        br = tmap.branch(int(jj))
        d1, d2 = br.deriv(y[m]), br.deriv2(y[m])
        prod[m] = d1
        acc[m] = d2 / d1 ** 2 * d1
        y[m] = br.value(y[m])
    for k in range(1, int(i.max(initial=0)) + 1):
        m = i >= k
        ym = y[m]
        d1, d2 = b1.deriv(ym), b1.deriv2(ym)
        prod[m] *= d1
        acc[m] += d2 / d1 ** 2 * prod[m]
        y[m] = b1.value(ym)
    return prod, acc / prod, y


def build_induced(tmap: BranchMap, z: float, n_max: int, check: bool = True) -> InducedSystem:
    """Return-time partition of [z, 1] resolved up to ``i = n_max``.

    ``z = 0`` gives X^ = X with every cell returning at once.  With
    ``check`` the standing geometry T(z) in I_1 is enforced.
    """
    rows_j, rows_i, rows_lo, rows_hi = [], [], [], []
    sl_j, sl_lo, sl_hi = [], [], []
    if z == 0.0:
        zs = np.array([0.0])
        for jj, br in enumerate(tmap.branches, start=1):
            rows_j.append([jj]), rows_i.append([0]), rows_lo.append([br.domain_lo]), rows_hi.append([br.domain_hi])
    else:
        b1 = tmap.branch(1)
        if not b1.domain_lo < z <= b1.domain_hi:
            raise ConstructionError("z must lie in the first branch domain")
        if check and not float(b1.value(z)) < b1.domain_hi:
            raise ConstructionError("T(z) is not in I_1; the inducing geometry is violated")
        if n_max < 1:
            raise RangeError("n_max must be >= 1 when z > 0")
        zs = pullback_sequence(tmap, z, n_max)
        if z < b1.domain_hi:
            rows_j.append([1]), rows_i.append([0]), rows_lo.append([z]), rows_hi.append([b1.domain_hi])
        for jj in range(2, tmap.n_branches + 1):
            br = tmap.branch(jj)
            y0, y1 = br.image
            if max(z, y0) < y1:
                rows_j.append([jj]), rows_i.append([0])
                rows_lo.append([invert_branch(br, max(z, y0))]), rows_hi.append([br.domain_hi])
            ylo = np.maximum(zs[1:], y0)
            yhi = np.minimum(zs[:-1], y1)
            keep = np.flatnonzero(yhi > ylo)
            if keep.size:
                rows_j.append(np.full(keep.size, jj)), rows_i.append(keep + 1)
                rows_lo.append(invert_branch(br, ylo[keep])), rows_hi.append(invert_branch(br, yhi[keep]))
            top = min(zs[-1], y1)
            if y0 < top:
                sl_j.append(jj), sl_lo.append(br.domain_lo), sl_hi.append(float(invert_branch(br, top)))
    j = np.concatenate(rows_j).astype(int)
    i = np.concatenate(rows_i).astype(int)
    lo = np.concatenate(rows_lo).astype(float)
    hi = np.concatenate(rows_hi).astype(float)
    order = np.argsort(lo, kind="stable")
    j, i, lo, hi = j[order], i[order], lo[order], hi[order]
    d, rigorous = _cell_contraction(tmap, zs, j, i, lo, hi)
    return InducedSystem(
        map=tmap, z=float(z), n_max=int(n_max if z > 0 else 0), pullbacks=zs, j=j, i=i, lo=lo, hi=hi, d=d,
        sliver_j=np.asarray(sl_j, dtype=int), sliver_lo=np.asarray(sl_lo, dtype=float),
        sliver_hi=np.asarray(sl_hi, dtype=float), d_rigorous=rigorous,
    )


def _cell_contraction(tmap, zs, j, i, lo, hi):
    """d_ij = sup over the cell of 1/|T^'|.

    For a cusp first branch with affine or cusp branches T^' increases along
    each cell, so the left endpoint is exact; otherwise 64 interior samples
    are used and the result is flagged as non-rigorous.
    """
    monotone = all(br.kind in ("cusp", "affine") for br in tmap.branches)
    if monotone:
        fp, _, _ = _jet(tmap, j, np.zeros_like(i), lo)
        # (T_1^i)'(z_i) = prod_{m=1..i} T_1'(z_m) when T_j(lo) = z_i exactly
        if len(zs) > 1:
            q = np.concatenate([[1.0], np.cumprod(tmap.branch(1).deriv(zs[1:]))])
        else:
            q = np.array([1.0])
        lo_img = _branch_values(tmap, j, lo)
        exact = (i >= 1) & (i < len(zs)) & (lo_img == zs[np.clip(i, 0, len(zs) - 1)])
        dq = fp * q[np.clip(i, 0, len(q) - 1)]
        other = np.flatnonzero(~exact & (i >= 1))
        if other.size:
            dq[other], _, _ = _jet(tmap, j[other], i[other], lo[other])
        return 1.0 / dq, True
    ts = np.linspace(0.0, 1.0, 64)
    xs = lo[:, None] + (hi - lo)[:, None] * ts[None, :]
    jj = np.repeat(j, ts.size)
    ii = np.repeat(i, ts.size)
    fp, _, _ = _jet(tmap, jj, ii, xs.ravel())
    return 1.0 / np.abs(fp.reshape(xs.shape)).min(axis=1), False


def _branch_values(tmap, j, x):
    out = np.empty_like(x)
    for jj in np.unique(j):
        m = j == jj
        out[m] = tmap.branch(int(jj)).value(x[m])
    return out


def d_sequence(ind: InducedSystem) -> np.ndarray:
    """d_n = max over non-cusp branches of d_{n-1, j}, for n = 1..n_max+1.

    Entry 0 of the returned array is unused (NaN).
    """
    out = np.full(ind.n_max + 2, np.nan)
    mask = ind.j >= 2
    for n in range(1, ind.n_max + 2):
        sel = mask & (ind.i == n - 1)
        if np.any(sel):
            out[n] = ind.d[sel].max()
    return out


def return_time_masses(ind: InducedSystem, weights: Optional[GridFunction] = None,
                       normalize: bool = True) -> np.ndarray:
    """Mass of {tau = n} for n = 0..n_max+1 (slivers at n_max + 1).

    Unweighted masses are Lebesgue lengths; with ``weights`` (a density with
    respect to the normalised measure on X^) they are integrals of it.
    ``normalize`` divides lengths by |X^| so that both read as normalised
    measures.
    """
    scale = 1.0 / ind.measure if normalize else 1.0
    if weights is None:
        cell_mass = (ind.hi - ind.lo) * scale
        sl_mass = (ind.sliver_hi - ind.sliver_lo) * scale
    else:
        cell_mass = weights.integrate(ind.lo, ind.hi) * scale
        sl_mass = weights.integrate(ind.sliver_lo, ind.sliver_hi) * scale
    out = np.bincount(ind.tau, weights=cell_mass, minlength=ind.n_max + 2)[: ind.n_max + 2]
    out = out.astype(np.result_type(out, float))
    out[ind.n_max + 1] += np.sum(sl_mass)
    return out


def tail_measures(ind: InducedSystem, weights: Optional[GridFunction] = None,
                  normalize: bool = True) -> np.ndarray:
    """tail[n] = measure of {tau > n} for n = 0..n_max."""
    m = return_time_masses(ind, weights, normalize)
    rev = np.cumsum(m[::-1])[::-1]
    return rev[1:]


def tail_measure(ind: InducedSystem, n: int, weights: Optional[GridFunction] = None,
                 normalize: bool = True) -> float:
    """Measure of {tau > n}: normalised Lebesgue by default, or weighted."""
    if n < 0 or n > ind.n_max:
        raise RangeError(f"n={n} outside 0..{ind.n_max}")
    return float(np.real(tail_measures(ind, weights, normalize)[n]))


def kac_check(ind: InducedSystem, mu_hat: GridFunction, mu_Xhat: float) -> float:
    """sum_n n mu^(tau = n) times mu(X^); equals 1 by the Kac formula."""
    m = return_time_masses(ind, mu_hat, normalize=True)
    n = np.arange(m.size)
    return float(np.sum(n * m) * mu_Xhat)


def tail_exponent(ind: InducedSystem, window: Optional[tuple] = None) -> float:
    """Power-law exponent p of z_n ~ n^{-p} from the last decade of pullbacks."""
    zs = ind.pullbacks
    if zs.size < 20:
        return math.nan
    lo, hi = window if window else (max(1, zs.size // 10), zs.size - 1)
    n = np.arange(lo, hi + 1)
    slope = np.polyfit(np.log(n), np.log(zs[lo: hi + 1]), 1)[0]
    return float(-slope)


def kac_tail_slack(ind: InducedSystem, mu_hat: GridFunction, mu_Xhat: float) -> float:
    """Bound on the part of sum_n n mu^(tau = n) cut off by the truncation.

    sum_{n > N} mu^(tau > n) <= max(h^) * t_N * N / (p - 1) with t_N the
    normalised length of {tau > N} and p the fitted tail exponent.
    """
    t_n = tail_measure(ind, ind.n_max)
    if t_n == 0.0:
        return 0.0
    p = tail_exponent(ind)
    if not p > 1:
        return math.inf
    return float(mu_Xhat * np.max(np.abs(mu_hat.values)) * t_n * ind.n_max / (p - 1.0))


def distortion_bound(ind: InducedSystem, samples: int = 5) -> tuple[float, bool]:
    """sup |T^''| / |T^'|^2 over the resolved cells (sampled; not rigorous)."""
    key = ("distortion", samples)
    if key not in ind._cache:
        ts = np.linspace(0.0, 1.0, samples)
        xs = ind.lo[:, None] + (ind.hi - ind.lo)[:, None] * ts[None, :]
        _, dist, _ = _jet(ind.map, np.repeat(ind.j, samples), np.repeat(ind.i, samples), xs.ravel())
        ind._cache[key] = float(np.max(np.abs(dist)))
    return ind._cache[key], False


def image_intervals(ind: InducedSystem) -> tuple[np.ndarray, np.ndarray]:
    """Endpoints of T^(cell) for every cell."""
    _, _, a = _jet(ind.map, ind.j, ind.i, ind.lo)
    _, _, b = _jet(ind.map, ind.j, ind.i, ind.hi)
    return a, b


def min_image_length(ind: InducedSystem, normalize: bool = True) -> float:
    """Smallest image length over the (finitely many) distinct images."""
    a, b = image_intervals(ind)
    length = np.abs(b - a)
    length = length[(ind.hi - ind.lo) > 0]
    c = float(length.min()) if length.size else 0.0
    return c / ind.measure if normalize else c


def summary_record(ind: InducedSystem, fits: Optional[dict] = None) -> dict:
    zs = ind.pullbacks
    rec = {
        "z": ind.z,
        "n_max": ind.n_max,
        "n_cells": ind.n_cells,
        "tail_bound": ind.tail_bound,
        "d_rigorous": ind.d_rigorous,
        "z_n_head": [float(v) for v in zs[:5]],
        "z_n_tail": [float(v) for v in zs[-3:]],
    }
    if fits:
        rec["fits"] = fits
    return rec


def mu_xhat_kac(ind: InducedSystem, h_hat: GridFunction) -> float:
    """mu(X^) = 1 / E[tau] under h^, with unresolved mass at tau = n_max + 1.

    This is the value the truncated renewal sequence itself converges to,
    so covariances computed from it vanish in the limit.
    """
    m = return_time_masses(ind, h_hat, normalize=True)
    return float(1.0 / np.sum(np.arange(m.size) * m))
