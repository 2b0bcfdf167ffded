"""Ulam discretisation of the induced operator P^ and the full-map operator P.

Matrices act on row vectors of cell masses: ``m -> m @ M``.  Entries come
from exact preimage intervals: every source cell is cut at the preimages of
the target grid edges, and each elementary piece contributes its length to
``M[k, l]`` (divided by the source cell length).  Every entry also carries
the return time of the piece it came from, so ``R_n`` is an exact split of
``M`` rather than a row mask.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .errors import ContractError, DomainError, NumericalError, RangeError
from .grid import GridFunction, uniform_edges
from .induced import InducedSystem
from .maps import BranchMap, invert_branch

_EPS = np.finfo(float).eps


@dataclass
class UlamOperator:
    """Row-stochastic Ulam matrix in coordinate form, one entry per (k, l, tau)."""

    kind: str
    edges: np.ndarray
    rows: np.ndarray
    cols: np.ndarray
    vals: np.ndarray
    tau: np.ndarray
    tmap: BranchMap
    ind: Optional[InducedSystem] = None
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def lo(self) -> float:
        return float(self.edges[0])

    @property
    def hi(self) -> float:
        return float(self.edges[-1])

    @property
    def n_cells(self) -> int:
        return self.edges.size - 1

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.edges)

    @property
    def measure(self) -> float:
        return self.hi - self.lo

    @property
    def tau_max(self) -> int:
        return int(self.tau.max(initial=1))

    @property
    def matrix(self) -> sp.csr_matrix:
        if "M" not in self._cache:
            n = self.n_cells
            self._cache["M"] = sp.csr_matrix((self.vals, (self.rows, self.cols)), shape=(n, n))
        return self._cache["M"]

    @property
    def matrix_t(self) -> sp.csr_matrix:
        if "MT" not in self._cache:
            self._cache["MT"] = self.matrix.T.tocsr()
        return self._cache["MT"]

    def row_sums(self) -> np.ndarray:
        return np.bincount(self.rows, weights=self.vals, minlength=self.n_cells)

    def push(self, mass: np.ndarray) -> np.ndarray:
        """One step of the transfer operator on cell masses."""
        return self.matrix_t @ mass

    def apply(self, f: GridFunction) -> GridFunction:
        """Transfer operator on a density (cell averages)."""
        self._check_grid(f)
        w = self.widths
        return f.with_values(self.push(f.values * w) / w)

    def _check_grid(self, f: GridFunction):
        if f.n_cells != self.n_cells or not np.allclose(f.edges, self.edges, rtol=0, atol=1e-14):
            raise ContractError("grid function does not live on the operator grid")

    def grid_function(self, values) -> GridFunction:
        return GridFunction(self.lo, self.hi, values, self.edges)

    def stacked(self, n_blocks: Optional[int] = None) -> sp.csr_matrix:
        """[R_1 | R_2 | ... | R_K] as one N x NK matrix (K = tau_max by default)."""
        k = self.tau_max if n_blocks is None else n_blocks
        key = ("stack", k)
        if key not in self._cache:
            n = self.n_cells
            keep = self.tau <= k
            self._cache[key] = sp.csr_matrix(
                (self.vals[keep], (self.rows[keep], (self.tau[keep] - 1) * n + self.cols[keep])), shape=(n, n * k))
        return self._cache[key]

    def tau_row_mass(self) -> sp.csr_matrix:
        """Row mass split by return time: entry (k, tau)."""
        if "trm" not in self._cache:
            self._cache["trm"] = sp.csr_matrix(
                (self.vals, (self.rows, self.tau)), shape=(self.n_cells, self.tau_max + 1))
        return self._cache["trm"]

    @property
    def cell_tau(self) -> np.ndarray:
        """Majority return time of each grid cell (by length)."""
        return np.asarray(self.tau_row_mass().argmax(axis=1)).ravel()

    @property
    def straddle(self) -> np.ndarray:
        """Cells meeting more than one return-time set."""
        trm = self.tau_row_mass()
        return np.diff(trm.indptr) > 1


def _assemble(kind, tmap, src_edges, starts, tgt, tau, ind=None) -> UlamOperator:
    """Cut source cells by preimage pieces (tiling the source domain)."""
    order = np.argsort(starts, kind="stable")
    starts, tgt, tau = starts[order], tgt[order], tau[order]
    pts = np.union1d(starts, src_edges)
    pts = pts[(pts >= src_edges[0]) & (pts <= src_edges[-1])]
    left = pts[:-1]
    length = np.diff(pts)
    q = np.searchsorted(starts, left, side="right") - 1
    k = np.searchsorted(src_edges, left, side="right") - 1
    n = src_edges.size - 1
    ok = (q >= 0) & (k >= 0) & (k < n) & (length > 0)
    q, k, length = q[ok], k[ok], length[ok]
    l, t = tgt[q], tau[q]
    t_span = int(t.max(initial=1)) + 1
    key = (k.astype(np.int64) * n + l) * t_span + t
    uniq, inv = np.unique(key, return_inverse=True)
    total = np.bincount(inv, weights=length)
    rows = (uniq // t_span) // n
    cols = (uniq // t_span) % n
    taus = uniq % t_span
    width = np.diff(src_edges)
    return UlamOperator(kind=kind, edges=np.asarray(src_edges, dtype=float), rows=rows.astype(np.int64),
                        cols=cols.astype(np.int64), vals=total / width[rows], tau=taus.astype(np.int64),
                        tmap=tmap, ind=ind)


def _level_points(ind: InducedSystem, xedges: np.ndarray, depth: int) -> np.ndarray:
    """Row i holds T_1^{-i} of the grid edges strictly inside I_0 = [z, T(z)]."""
    key = ("levels", xedges.size, float(xedges[-1]), depth)
    if key not in ind._cache:
        b1 = ind.map.branch(1)
        tz = float(b1.value(ind.z))
        p0 = xedges[(xedges > ind.z) & (xedges < tz)]
        out = np.empty((depth + 1, p0.size))
        out[0] = p0
        for i in range(1, depth + 1):
            out[i] = invert_branch(b1, out[i - 1])
        ind._cache[key] = out
    return ind._cache[key]


def _induced_pieces(ind: InducedSystem, xedges: np.ndarray):
    tmap = ind.map
    n = xedges.size - 1
    starts, tgt, tau = [], [], []
    for c in np.flatnonzero(ind.i == 0):
        br = tmap.branch(int(ind.j[c]))
        ylo = max(float(br.value(ind.lo[c])), xedges[0])
        yhi = min(float(br.value(ind.hi[c])), xedges[-1])
        inner = xedges[(xedges > ylo) & (xedges < yhi)]
        first = int(np.clip(np.searchsorted(xedges, ylo, side="right") - 1, 0, n - 1))
        starts += [[ind.lo[c]], np.atleast_1d(invert_branch(br, inner))]
        tgt += [[first], first + 1 + np.arange(inner.size)]
        tau += [[1], np.ones(inner.size, dtype=int)]
    deep = {}
    if ind.z > 0 and np.any(ind.i >= 1):
        levels = _level_points(ind, xedges, ind.n_max)
        cols = np.arange(levels.shape[1])
        for jj in np.unique(ind.j[ind.i >= 1]):
            br = tmap.branch(int(jj))
            sel = np.flatnonzero((ind.j == jj) & (ind.i >= 1))
            ii = ind.i[sel]
            ylo = br.value(ind.lo[sel])[:, None]
            yhi = br.value(ind.hi[sel])[:, None]
            pts = levels[ii]
            valid = (pts > ylo) & (pts < yhi)
            xs = invert_branch(br, np.where(valid, pts, ylo))
            first = (pts <= ylo).sum(axis=1)
            rr, cc = np.nonzero(valid)
            starts += [ind.lo[sel], xs[rr, cc]]
            tgt += [first, cc + 1]
            tau += [ii + 1, ii[rr] + 1]
            d = np.flatnonzero(ii == ind.n_max)
            if d.size:
                c = sel[d[0]]
                v = valid[d[0]]
                deep[int(jj)] = ((np.concatenate([[ind.lo[c]], xs[d[0]][v]]) - ind.lo[c]) / (ind.hi[c] - ind.lo[c]),
                                 np.concatenate([[first[d[0]]], cols[v] + 1]))
    # unresolved slivers reuse the deepest resolved level's image distribution
    for jj, slo, shi in zip(ind.sliver_j, ind.sliver_lo, ind.sliver_hi):
        rel, lab = deep.get(int(jj), (np.array([0.0]), np.array([0])))
        starts.append(slo + rel * (shi - slo))
        tgt.append(lab)
        tau.append(np.full(rel.size, ind.n_max + 1))
    return (np.concatenate(starts).astype(float), np.concatenate(tgt).astype(np.int64),
            np.concatenate(tau).astype(np.int64))


def induced_edges(ind: InducedSystem, n_cells: int) -> np.ndarray:
    return uniform_edges(ind.z, 1.0, n_cells)


def full_grid(ind: InducedSystem, n_cells: int, refine: str = "pullback", depth: Optional[int] = None,
              ratio: float = 0.9, floor: float = 1e-12) -> np.ndarray:
    """Full-map grid on [0, 1] whose X^ part is the induced grid.

    ``pullback`` places the edges of J = [0, z) at T_1^{-i} of the grid
    edges in I_0 = [z, T(z)], i = 1..depth, so the full Ulam chain is
    exactly consistent with the induced one.  ``uniform`` continues the X^
    spacing; ``geometric`` shrinks cells by ``ratio`` toward 0.
    """
    xe = induced_edges(ind, n_cells)
    if ind.z == 0.0:
        return xe
    if refine == "uniform":
        k = max(1, int(math.ceil(ind.z / (xe[1] - xe[0]))))
        je = uniform_edges(0.0, ind.z, k)[:-1]
    elif refine == "geometric":
        if not 0 < ratio < 1:
            raise DomainError("ratio must be in (0, 1)")
        w = xe[1] - xe[0]
        pts, x = [], ind.z
        while x > floor:
            x -= w
            w *= ratio
            if x <= floor:
                break
            pts.append(x)
        je = np.concatenate([[0.0], np.sort(pts)])
    elif refine == "pullback":
        depth = ind.n_max if depth is None else depth
        if depth > ind.n_max:
            raise RangeError("pullback depth exceeds the resolved pullbacks")
        lv = _level_points(ind, xe, ind.n_max)[1: depth + 1]
        zs = ind.pullbacks[1: depth + 1]
        je = np.concatenate([[0.0], zs, lv.ravel()])
        je = np.unique(je)
    else:
        raise DomainError(f"unknown refinement {refine!r}")
    return np.concatenate([je, xe])


def ulam_matrix(obj, n_cells: Optional[int] = None, edges=None) -> UlamOperator:
    """Ulam operator of an InducedSystem (grid on X^) or a BranchMap (grid on [0, 1])."""
    if isinstance(obj, InducedSystem):
        if n_cells is None or n_cells < 2:
            raise RangeError("n_cells must be >= 2")
        xe = induced_edges(obj, n_cells)
        s, t, u = _induced_pieces(obj, xe)
        return _assemble("induced", obj.map, xe, s, t, u, ind=obj)
    if isinstance(obj, BranchMap):
        fe = uniform_edges(0.0, 1.0, n_cells) if edges is None else np.asarray(edges, dtype=float)
        if fe.size < 3:
            raise RangeError("n_cells must be >= 2")
        return _assemble("full", obj, fe, *_full_pieces(obj, fe))
    raise ContractError("ulam_matrix needs an InducedSystem or a BranchMap")


def full_ulam(ind: InducedSystem, n_cells: int, refine: str = "pullback", **kw) -> UlamOperator:
    """Full-map operator on ``full_grid(ind, n_cells, refine)``."""
    op = ulam_matrix(ind.map, edges=full_grid(ind, n_cells, refine, **kw))
    op.ind = ind
    return op


def _full_pieces(tmap: BranchMap, fe: np.ndarray):
    n = fe.size - 1
    starts, tgt = [], []
    for br in tmap.branches:
        ylo = max(float(br.value(br.domain_lo)), fe[0])
        yhi = min(float(br.value(br.domain_hi)), fe[-1])
        inner = fe[(fe > ylo) & (fe < yhi)]
        first = int(np.clip(np.searchsorted(fe, ylo, side="right") - 1, 0, n - 1))
        starts += [[br.domain_lo], np.atleast_1d(invert_branch(br, inner))]
        tgt += [[first], first + 1 + np.arange(inner.size)]
    s = np.concatenate(starts).astype(float)
    return s, np.concatenate(tgt).astype(np.int64), np.ones(s.size, dtype=np.int64)


def xhat_offset(ind_op: UlamOperator, full_op: UlamOperator) -> int:
    """Index of the first X^ cell in the full grid (grids must agree on X^)."""
    off = full_op.n_cells - ind_op.n_cells
    if off < 0 or not np.array_equal(full_op.edges[off:], ind_op.edges):
        raise ContractError("full grid does not contain the induced grid on X^")
    return off


# ----- densities ---------------------------------------------------------

def normalize_density(op: UlamOperator, values: np.ndarray) -> GridFunction:
    v = np.asarray(values, dtype=float)
    return op.grid_function(v * op.measure / np.sum(v * op.widths))


def fixed_density_residual(op: UlamOperator, h: GridFunction) -> float:
    """||P h - h||_1 for the normalised measure on the operator grid."""
    return (op.apply(h) - h).l1()


def fixed_density(op: UlamOperator, tol: float = 1e-13, max_iter: int = 10 ** 6,
                  patience: int = 500) -> GridFunction:
    """Power iteration from the uniform density until the L1 change is <= tol.

    Stagnation below 1e3 machine epsilon (the rounding floor of one matvec)
    is accepted as convergence; stagnation above it is a numerical error.
    """
    w = op.widths
    m = w / op.measure
    best, since = math.inf, 0
    change = math.inf
    for it in range(max_iter):
        new = op.push(m)
        new *= 1.0 / new.sum()
        change = float(np.abs(new - m).sum())
        m = new
        if change <= tol:
            break
        if change < 0.5 * best:
            best, since = change, 0
        else:
            since += 1
            if since > patience:
                if change <= max(tol, 1e3 * _EPS):
                    break
                raise NumericalError(f"power iteration stalled at L1 change {change:.3g}")
    else:
        raise NumericalError(f"power iteration did not converge; last change {change:.3g}")
    return normalize_density(op, np.maximum(m, 0.0) / w)


@dataclass
class GapReport:
    modulus: float
    lower: float
    upper: float
    iterations: int
    converged: bool


def spectral_gap(op: UlamOperator, h: Optional[GridFunction] = None, tol: float = 1e-6,
                 max_iter: int = 20000, window: int = 50, seed: int = 0) -> GapReport:
    """Second eigenvalue modulus by power iteration deflated against (h, 1).

    The growth factor is averaged geometrically over a window so complex
    pairs do not make the estimate oscillate; the min/max over the last
    windows form the reported interval.
    """
    if h is None:
        h = fixed_density(op)
    hm = h.values * op.widths
    hm = hm / hm.sum()
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(op.n_cells)
    v -= v.sum() * hm
    v /= np.abs(v).sum()
    logs = []
    estimates = []
    for it in range(1, max_iter + 1):
        v = op.push(v)
        v -= v.sum() * hm
        s = np.abs(v).sum()
        if s == 0.0:
            return GapReport(0.0, 0.0, 0.0, it, True)
        logs.append(math.log(s))
        v /= s
        if it % window == 0:
            estimates.append(math.exp(np.mean(logs[-window:])))
            if len(estimates) >= 3:
                last = estimates[-3:]
                if max(last) - min(last) <= tol * max(last):
                    return GapReport(estimates[-1], min(last), max(last), it, True)
            if estimates[-1] < 1e-12:
                return GapReport(estimates[-1], 0.0, estimates[-1], it, True)
    last = estimates[-3:] if estimates else [math.nan]
    return GapReport(estimates[-1] if estimates else math.nan, min(last), max(last), max_iter, False)


# ----- renewal operators -------------------------------------------------

def extract_Rn(op: UlamOperator, n: int, mode: str = "exact") -> sp.csr_matrix:
    """Part of the induced matrix carried by return time n.

    ``exact`` uses the per-piece return time; ``rowmask`` keeps whole rows
    whose majority return time is n.
    """
    if op.kind != "induced":
        raise ContractError("R_n needs an induced operator")
    if n < 1:
        raise RangeError("n must be >= 1")
    N = op.n_cells
    if mode == "exact":
        keep = op.tau == n
        return sp.csr_matrix((op.vals[keep], (op.rows[keep], op.cols[keep])), shape=(N, N))
    if mode == "rowmask":
        mask = (op.cell_tau == n).astype(float)
        return sp.diags(mask) @ op.matrix
    raise DomainError(f"unknown mode {mode!r}")


def reconstruct(op: UlamOperator, n_upto: Optional[int] = None) -> sp.csr_matrix:
    """sum_{n <= n_upto} R_n in one pass (exact mode)."""
    n_upto = op.tau_max if n_upto is None else n_upto
    keep = op.tau <= n_upto
    return sp.csr_matrix((op.vals[keep], (op.rows[keep], op.cols[keep])), shape=op.matrix.shape)


def leakage_bound(op: UlamOperator, n_upto: Optional[int] = None, mode: str = "exact") -> float:
    """Max-entry bound on M - sum_{n <= n_upto} R_n."""
    n_upto = op.tau_max if n_upto is None else n_upto
    beyond = op.tau > n_upto
    trunc = 0.0
    if np.any(beyond):
        part = sp.csr_matrix((op.vals[beyond], (op.rows[beyond], op.cols[beyond])), shape=op.matrix.shape)
        trunc = float(np.abs(part).max())
    if mode == "exact":
        return trunc
    trm = op.tau_row_mass()
    total = np.asarray(trm.sum(axis=1)).ravel()
    major = np.asarray(trm.max(axis=1).todense()).ravel()
    return trunc + float(np.max(total - major))


def tail_row_mass(op: UlamOperator, n: int) -> float:
    """max over rows of the mass with return time > n."""
    trm = op.tau_row_mass().tocsc()[:, n + 1:]
    if trm.nnz == 0:
        return 0.0
    return float(np.asarray(trm.sum(axis=1)).max())


def R_of_z(op: UlamOperator, z: complex, n_trunc: Optional[int] = None) -> sp.csr_matrix:
    """sum_{n <= n_trunc} z^n R_n (all return times by default)."""
    if abs(z) > 1 + 1e-15:
        raise DomainError("|z| must be <= 1")
    if op.kind != "induced":
        raise ContractError("R(z) needs an induced operator")
    n_trunc = op.tau_max if n_trunc is None else n_trunc
    keep = op.tau <= n_trunc
    if z == 0:
        weights = np.zeros(int(keep.sum()))
    else:
        weights = np.power(complex(z), op.tau[keep])
        if np.isrealobj(z) or complex(z).imag == 0:
            weights = weights.real
    N = op.n_cells
    return sp.csr_matrix((op.vals[keep] * weights, (op.rows[keep], op.cols[keep])), shape=(N, N))


def R_of_z_bound(op: UlamOperator, z: complex, n_trunc: int) -> float:
    """Row-L1 bound on the truncated part of R(z)."""
    return abs(z) ** (n_trunc + 1) * tail_row_mass(op, n_trunc)


@dataclass
class RenewalReport:
    discrepancy: float
    bound: float
    series_tail: float
    leakage: float

    @property
    def ok(self) -> bool:
        return self.discrepancy <= self.bound


def renewal_check(ind_op: UlamOperator, full_op: UlamOperator, z: complex, n_trunc: int) -> RenewalReport:
    """Compare (I - R(z))^{-1} with I + sum_{n <= n_trunc} z^n T_n on X^.

    T_n is the X^-restricted n-step full-map matrix.  The bound adds the
    tail of the series, sum_{n > n_trunc} |z|^n, and the effect of the
    truncated return times: both chains agree on every path returning
    before the lumped level, so the gap is O(|z|^{tau_lump}).
    """
    if not abs(z) < 1:
        raise DomainError("renewal check needs |z| < 1")
    off = xhat_offset(ind_op, full_op)
    N = ind_op.n_cells
    eye = np.eye(N)
    a = eye - R_of_z(ind_op, z).toarray()
    try:
        xa = np.linalg.solve(a, eye.astype(a.dtype))
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"singular renewal solve: {exc}") from exc
    dtype = complex if np.iscomplexobj(z) and complex(z).imag != 0 else float
    z = z if dtype is complex else float(np.real(z))
    v = np.zeros((full_op.n_cells, N), dtype=dtype)
    v[off:, :] = eye
    xb = eye.astype(dtype)
    zn = 1.0
    ft = full_op.matrix_t
    for _ in range(n_trunc):
        v = ft @ v
        zn *= z
        xb = xb + zn * v[off:, :].T
    disc = float(np.max(np.abs(xa - xb)))
    r = abs(z)
    series_tail = r ** (n_trunc + 1) / (1 - r)
    ind = ind_op.ind
    leak = 0.0
    if ind is not None and ind.z > 0:
        depth = _pullback_depth(full_op, ind)
        lump = min(ind.n_max, depth) + 1
        leak = 2.0 * r ** lump / (1 - r) ** 2
    return RenewalReport(discrepancy=disc, bound=series_tail + leak, series_tail=series_tail, leakage=leak)


def _pullback_depth(full_op: UlamOperator, ind: InducedSystem) -> int:
    """Number of resolved pullback levels in the full grid's J part."""
    je = full_op.edges[full_op.edges < ind.z]
    zs = ind.pullbacks[1:]
    hit = np.isin(zs, je)
    return int(np.argmin(hit)) if not hit.all() else zs.size


def twisted_min_sv(op: UlamOperator, t: float) -> float:
    """Smallest singular value of I - R(e^{it}) on the grid."""
    if not 0 <= t < 2 * math.pi + 1e-12:
        raise DomainError("t must be in [0, 2 pi)")
    z = complex(math.cos(t), math.sin(t))
    a = np.eye(op.n_cells) - R_of_z(op, z if t != 0 else 1.0).toarray()
    return float(np.linalg.svd(a, compute_uv=False)[-1])


def rn_norm_probe(op: UlamOperator, ns, trials: int = 20, seed: int = 0) -> np.ndarray:
    """Probed BV-proxy norm of R_n: max of (V + L1)(R_n f) / (V + L1)(f).

    Test functions are the constant and random step functions; the result
    is a lower bound for the operator norm on BV.
    """
    from .norms import random_step_function, variation

    rng = np.random.default_rng(seed)
    tests = [op.grid_function(np.ones(op.n_cells))]
    tests += [random_step_function(rng, op.lo, op.hi, op.n_cells) for _ in range(trials)]
    out = []
    w = op.widths
    for n in ns:
        rt = extract_Rn(op, int(n)).T.tocsr()
        best = 0.0
        for f in tests:
            g = op.grid_function(rt @ (f.values * w) / w)
            num = variation(g) + g.l1()
            den = variation(f) + f.l1()
            best = max(best, num / den)
        out.append(best)
    return np.asarray(out)


@dataclass
class ExtendedDensity:
    h: GridFunction
    mu_Xhat: float
    tail_mass: float
    return_defect: float
    n_steps: int


def extend_density(tmap: BranchMap, ind: InducedSystem, h_hat: GridFunction, n_trunc: int,
                   full_op: Optional[UlamOperator] = None, refine: str = "pullback") -> ExtendedDensity:
    """h proportional to sum_{n >= 0} P^n(h^ 1_{tau > n}) on the full grid.

    Iterates w_{n+1} = 1_J P w_n starting from h^ on X^.  ``tail_mass`` is
    the (normalised) mass still inside J after n_trunc steps and
    ``return_defect`` is ||P h - h||_1.
    """
    if full_op is None:
        kw = {"depth": min(ind.n_max, n_trunc)} if refine == "pullback" else {}
        full_op = full_ulam(ind, h_hat.n_cells, refine=refine, **kw)
    off = full_op.n_cells - h_hat.n_cells
    if off < 0 or not np.allclose(full_op.edges[off:], h_hat.edges, rtol=0, atol=1e-14):
        raise ContractError("h_hat grid must match the X^ part of the full grid")
    fw = full_op.widths
    w = np.zeros(full_op.n_cells)
    w[off:] = h_hat.values * h_hat.widths
    acc = w.copy()
    steps = 0
    if off > 0:
        for steps in range(1, n_trunc + 1):
            w = full_op.push(w)
            w[off:] = 0.0
            acc += w
            if w.sum() <= 0.0:
                break
    total = acc.sum()
    h = full_op.grid_function(acc / total / fw)
    mu_x = float(acc[off:].sum() / total)
    defect = float(np.abs(full_op.push(h.values * fw) - h.values * fw).sum())
    return ExtendedDensity(h=h, mu_Xhat=mu_x, tail_mass=float(w.sum() / total) if off > 0 else 0.0,
                           return_defect=defect, n_steps=steps)


# ----- coordinate-format I/O ----------------------------------------------

def write_coo(path, matrix) -> None:
    m = sp.coo_matrix(matrix)
    with open(path, "w") as fh:
        fh.write(f"# {m.shape[0]} {m.shape[1]} {m.nnz}\n")
        order = np.lexsort((m.col, m.row))
        for r, c, v in zip(m.row[order], m.col[order], m.data[order]):
            fh.write(f"{r} {c} {float(v)!r}\n")


def read_coo(path) -> sp.csr_matrix:
    with open(path) as fh:
        head = fh.readline().split()
        shape = (int(head[1]), int(head[2]))
        data = np.loadtxt(fh, ndmin=2)
    if data.size == 0:
        return sp.csr_matrix(shape)
    return sp.csr_matrix((data[:, 2], (data[:, 0].astype(int), data[:, 1].astype(int))), shape=shape)
