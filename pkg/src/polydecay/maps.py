"""Piecewise monotone interval maps with a neutral fixed point at 0.

Branches are numbered from 1, so branch 1 is the one adjacent to the
fixed point (the cusp ``x + c x^(1+gamma)`` for the built-in families)
and branch ``K`` owns ``x = 1``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.optimize import brentq

from .errors import ConstructionError, DomainError, NumericalError, RangeError, UnsupportedError

NEWTON_TOL = 1e-13
NEWTON_MAX_ITER = 200
_EPS = np.finfo(float).eps

ORDERS = ("value", "derivative", "second_derivative")


@dataclass(frozen=True)
class Branch:
    """One monotone increasing piece of a map.

    ``kind`` is ``"cusp"`` (uses ``c``, ``gamma``), ``"affine"`` (``slope``,
    ``intercept``) or ``"custom"`` (``forward``, ``derivative`` and optionally
    ``second`` callables, all vectorised over numpy arrays).
    """

    domain_lo: float
    domain_hi: float
    kind: str
    c: float = 0.0
    gamma: float = 0.0
    slope: float = 0.0
    intercept: float = 0.0
    forward: Optional[Callable] = field(default=None, compare=False)
    derivative: Optional[Callable] = field(default=None, compare=False)
    second: Optional[Callable] = field(default=None, compare=False)

    def __post_init__(self):
        if not self.domain_lo < self.domain_hi:
            raise ConstructionError(f"empty branch domain [{self.domain_lo}, {self.domain_hi}]")
        if self.kind == "cusp":
            if not (self.c > 0 and 0 < self.gamma < 1):
                raise ConstructionError("cusp branch needs c > 0 and gamma in (0, 1)")
        elif self.kind == "affine":
            if not self.slope > 0:
                raise ConstructionError("affine branch must be increasing")
        elif self.kind == "custom":
            if self.forward is None or self.derivative is None:
                raise ConstructionError("custom branch needs forward and derivative callables")
        else:
            raise ConstructionError(f"unknown branch kind {self.kind!r}")

    def value(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "cusp":
            return x + self.c * np.power(x, 1.0 + self.gamma)
        if self.kind == "affine":
            return self.slope * x + self.intercept
        return np.asarray(self.forward(x), dtype=float)

    def deriv(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "cusp":
            return 1.0 + self.c * (1.0 + self.gamma) * np.power(x, self.gamma)
        if self.kind == "affine":
            return np.full_like(x, self.slope)
        return np.asarray(self.derivative(x), dtype=float)

    def deriv2(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "cusp":
            with np.errstate(divide="ignore"):
                return self.c * self.gamma * (1.0 + self.gamma) * np.power(x, self.gamma - 1.0)
        if self.kind == "affine":
            return np.zeros_like(x)
        if self.second is None:
            raise UnsupportedError("custom branch has no second-derivative formula")
        return np.asarray(self.second(x), dtype=float)

    @property
    def image(self) -> tuple[float, float]:
        return float(self.value(self.domain_lo)), float(self.value(self.domain_hi))


@dataclass(frozen=True)
class BranchMap:
    """An ordered tiling of [0, 1] by monotone branches.

    Cells are half-open, ``[a_{j-1}, a_j)``, except that ``x = 1`` belongs to
    the last branch.
    """

    branches: tuple
    family: str = "custom"
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "branches", tuple(self.branches))
        if not self.branches:
            raise ConstructionError("a map needs at least one branch")
        if self.branches[0].domain_lo != 0.0 or self.branches[-1].domain_hi != 1.0:
            raise ConstructionError("branches must tile [0, 1]")
        for left, right in zip(self.branches, self.branches[1:]):
            if left.domain_hi != right.domain_lo:
                raise ConstructionError("branch domains must be contiguous")
        for j, br in enumerate(self.branches, start=1):
            xs = np.linspace(br.domain_lo, br.domain_hi, 257)
            ys = br.value(xs)
            if np.any(np.diff(ys) <= 0):
                raise ConstructionError(f"branch {j} is not strictly increasing")
            if ys[0] < -1e-12 or ys[-1] > 1 + 1e-12:
                raise ConstructionError(f"branch {j} image leaves [0, 1]")

    @property
    def breakpoints(self) -> np.ndarray:
        return np.array([self.branches[0].domain_lo] + [b.domain_hi for b in self.branches])

    @property
    def n_branches(self) -> int:
        return len(self.branches)

    def branch(self, j: int) -> Branch:
        if not 1 <= j <= len(self.branches):
            raise DomainError(f"branch index {j} outside 1..{len(self.branches)}")
        return self.branches[j - 1]

    def owner(self, x):
        """1-based index of the branch owning each x."""
        x = np.asarray(x, dtype=float)
        idx = np.searchsorted(self.breakpoints, x, side="right")
        return np.clip(idx, 1, len(self.branches))

    def __call__(self, x):
        return evaluate(self, x)


def evaluate(tmap: BranchMap, x, order: str = "value"):
    """T(x), T'(x) or T''(x) from the branch owning each x."""
    if order not in ORDERS:
        raise DomainError(f"order must be one of {ORDERS}")
    xa = np.asarray(x, dtype=float)
    if np.any(xa < 0.0) or np.any(xa > 1.0) or np.any(np.isnan(xa)):
        raise DomainError("x must lie in [0, 1]")
    owner = tmap.owner(xa)
    out = np.empty_like(xa)
    for j, br in enumerate(tmap.branches, start=1):
        mask = owner == j
        if not np.any(mask):
            continue
        xs = xa[mask]
        if order == "value":
            out[mask] = br.value(xs)
        elif order == "derivative":
            out[mask] = br.deriv(xs)
        else:
            out[mask] = br.deriv2(xs)
    if np.ndim(x) == 0:
        return float(out)
    return out


def invert_branch(br: Branch, y, tol: float = NEWTON_TOL, max_iter: int = NEWTON_MAX_ITER):
    """Vectorised inverse of one branch: Newton steps safeguarded by bisection."""
    shape = np.shape(y)
    ya = np.atleast_1d(np.asarray(y, dtype=float)).ravel()
    y_lo, y_hi = br.image
    slack = 1e-12 * max(1.0, abs(y_hi))
    if np.any(ya < y_lo - slack) or np.any(ya > y_hi + slack) or np.any(np.isnan(ya)):
        raise RangeError(f"y outside branch image [{y_lo}, {y_hi}]")
    ya = np.clip(ya, y_lo, y_hi)
    if br.kind == "affine":
        x = np.clip((ya - br.intercept) / br.slope, br.domain_lo, br.domain_hi)
        return x.reshape(shape) if shape else float(x[0])

    lo = np.full_like(ya, br.domain_lo)
    hi = np.full_like(ya, br.domain_hi)
    x = lo + (ya - y_lo) / (y_hi - y_lo) * (hi - lo)
    if br.kind == "cusp":
        # T(x) >= x on the cusp, so the root never exceeds y
        x = np.minimum(x, ya)
    active = np.ones(ya.shape, dtype=bool)
    for _ in range(max_iter):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        xi, yi, li, hi_ = x[idx], ya[idx], lo[idx], hi[idx]
        g = br.value(xi) - yi
        li = np.where(g < 0, xi, li)
        hi_ = np.where(g > 0, xi, hi_)
        d = br.deriv(xi)
        with np.errstate(divide="ignore", invalid="ignore"):
            xn = xi - g / d
        bad = ~np.isfinite(xn) | (xn <= li) | (xn >= hi_)
        xn = np.where(bad, 0.5 * (li + hi_), xn)
        xn = np.where(g == 0, xi, xn)
        step = np.abs(xn - xi)
        done = (np.abs(g) <= tol) & ((step <= 4 * _EPS * np.abs(xi)) | (g == 0) | (hi_ - li <= 4 * _EPS * np.abs(xi)))
        x[idx], lo[idx], hi[idx] = xn, li, hi_
        active[idx[done]] = False
    if np.any(active):
        raise NumericalError(f"branch inversion did not converge in {max_iter} iterations")
    resid = np.abs(br.value(x) - ya)
    if np.any(resid > tol):
        raise NumericalError(f"branch inversion residual {resid.max():.3g} exceeds {tol:g}")
    return x.reshape(shape) if shape else float(x[0])


def branch_inverse(tmap: BranchMap, branch_index: int, y, tol: float = NEWTON_TOL,
                   max_iter: int = NEWTON_MAX_ITER):
    """x in the domain of branch ``branch_index`` with T(x) = y."""
    return invert_branch(tmap.branch(branch_index), y, tol=tol, max_iter=max_iter)


def _full_affine(lo, hi, y0=0.0, y1=1.0):
    slope = (y1 - y0) / (hi - lo)
    return Branch(lo, hi, "affine", slope=slope, intercept=y0 - slope * lo)


def make_family(name: str, **params) -> BranchMap:
    """Build one of the standard maps.

    ``pm3``: cusp ``x + c x^(1+gamma)`` on [0, a] with ``a + c a^(1+gamma) = 1``
    followed by two affine full branches on [a, (1+a)/2] and [(1+a)/2, 1].
    ``lsv``: ``x(1 + 2^gamma x^gamma)`` on [0, 1/2], ``2x - 1`` on [1/2, 1].
    ``doubling``: ``2x mod 1``. ``affine``: ``k`` equal full branches
    (``k=3`` by default). ``custom``: affine pieces from ``breakpoints`` and
    ``slopes`` (optional ``intercepts``; a cusp first branch when ``c`` and
    ``gamma`` are given).
    """
    if name == "pm3":
        gamma = float(params.get("gamma", 0.5))
        c = float(params.get("c", 4.0))
        _check_cusp(c, gamma)
        a = brentq(lambda t: t + c * t ** (1 + gamma) - 1.0, 0.0, 1.0, xtol=1e-16, rtol=4 * _EPS)
        if not a < 0.5:
            raise ConstructionError(f"breakpoint a={a:.6g} >= 1/2 leaves affine slopes <= 2")
        mid = 0.5 * (a + 1.0)
        branches = [Branch(0.0, a, "cusp", c=c, gamma=gamma), _full_affine(a, mid), _full_affine(mid, 1.0)]
        return BranchMap(branches, family="pm3", params={"gamma": gamma, "c": c})
    if name == "lsv":
        gamma = float(params.get("gamma", 0.5))
        c = 2.0 ** gamma
        _check_cusp(c, gamma)
        branches = [Branch(0.0, 0.5, "cusp", c=c, gamma=gamma), _full_affine(0.5, 1.0)]
        return BranchMap(branches, family="lsv", params={"gamma": gamma})
    if name == "doubling":
        return BranchMap([_full_affine(0.0, 0.5), _full_affine(0.5, 1.0)], family="doubling", params={})
    if name == "affine":
        k = int(params.get("k", 3))
        if k < 2:
            raise ConstructionError("affine full-branch map needs k >= 2 (slope k > 1)")
        edges = np.linspace(0.0, 1.0, k + 1)
        edges[-1] = 1.0
        branches = [_full_affine(float(lo), float(hi)) for lo, hi in zip(edges[:-1], edges[1:])]
        return BranchMap(branches, family="affine", params={"k": k})
    if name == "custom":
        return _custom_map(params)
    raise ConstructionError(f"unknown family {name!r}")


def _check_cusp(c, gamma):
    if not 0 < gamma < 1:
        raise ConstructionError("gamma must lie in (0, 1)")
    if not c > 0:
        raise ConstructionError("c must be positive")


def _custom_map(params) -> BranchMap:
    try:
        bps = [float(v) for v in params["breakpoints"]]
    except KeyError as exc:
        raise ConstructionError("custom map needs 'breakpoints'") from exc
    k = len(bps) - 1
    slopes = params.get("slopes")
    intercepts = params.get("intercepts")
    cusp = "c" in params and "gamma" in params
    branches = []
    for j in range(k):
        lo, hi = bps[j], bps[j + 1]
        if j == 0 and cusp:
            c, gamma = float(params["c"]), float(params["gamma"])
            _check_cusp(c, gamma)
            branches.append(Branch(lo, hi, "cusp", c=c, gamma=gamma))
            continue
        if slopes is None:
            raise ConstructionError("custom map needs 'slopes'")
        s = float(slopes[j])
        if s <= 1.0:
            raise ConstructionError(f"branch {j + 1} slope {s} <= 1 is not expanding")
        b = float(intercepts[j]) if intercepts is not None else -s * lo
        branches.append(Branch(lo, hi, "affine", slope=s, intercept=b))
    out = {"breakpoints": bps}
    for key in ("slopes", "intercepts", "c", "gamma"):
        if params.get(key) is not None:
            out[key] = params[key]
    return BranchMap(branches, family="custom", params=out)


def map_to_config(tmap: BranchMap) -> dict:
    """Structured record for a family map (inverse of :func:`map_from_config`)."""
    return {"family": tmap.family, **tmap.params}


def map_from_config(cfg: dict) -> BranchMap:
    cfg = dict(cfg)
    family = cfg.pop("family", "pm3")
    cfg.pop("z", None)
    return make_family(family, **cfg)


@dataclass
class ValidationReport:
    """Outcome of the standing-hypothesis checks for an inducing point z."""

    z: float
    delta: float
    delta_argmin: float
    strict_expansion: bool
    t_z: float
    t_z_in_first_branch: bool
    fixed_point: bool
    neutral_fixed_point: bool
    distortion: float
    distortion_rigorous: bool
    min_image_length: float
    return_times: list
    gcd_return_times: int
    notes: list = field(default_factory=list)

    @property
    def passes(self) -> bool:
        return (self.strict_expansion and self.t_z_in_first_branch and self.fixed_point
                and self.gcd_return_times == 1 and math.isfinite(self.distortion))

    def as_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["passes"] = self.passes
        return d


def expansion_infimum(tmap: BranchMap, z: float, n_grid: int = 10001) -> tuple[float, float]:
    """inf of |T'| over [z, 1] and where it is attained.

    Dense sampling of every branch piece, plus the closed-form minima
    (left endpoint for a cusp, the slope for an affine piece).
    """
    best, where = math.inf, z
    for br in tmap.branches:
        lo, hi = max(br.domain_lo, z), br.domain_hi
        if lo > hi:
            continue
        if br.kind == "affine":
            val, at = br.slope, lo
        elif br.kind == "cusp":
            val, at = float(br.deriv(lo)), lo
        else:
            xs = np.linspace(lo, hi, n_grid)
            ds = np.abs(br.deriv(xs))
            k = int(np.argmin(ds))
            val, at = float(ds[k]), float(xs[k])
        if val < best:
            best, where = val, at
    return best, where


def validate_assumptions(tmap: BranchMap, z: float, n_max: int = 50) -> ValidationReport:
    """Check expansion, the position of T(z), distortion and return-time gcd.

    Failures are reported as flags; nothing is raised.
    """
    from .induced import build_induced, distortion_bound, min_image_length

    notes = []
    delta, at = expansion_infimum(tmap, z)
    b1 = tmap.branch(1)
    t_z = float(b1.value(min(max(z, b1.domain_lo), b1.domain_hi)))
    in_first = bool(b1.domain_lo < t_z < b1.domain_hi)
    fixed = abs(float(b1.value(0.0))) <= 1e-15
    neutral = fixed and abs(float(b1.deriv(0.0)) - 1.0) <= 1e-12
    try:
        ind = build_induced(tmap, z, n_max, check=False)
        taus = sorted({int(t) for t, lo, hi in zip(ind.tau, ind.lo, ind.hi) if hi > lo and t <= 50})
        g = 0
        for t in taus:
            g = math.gcd(g, t)
        dist, rigorous = distortion_bound(ind)
        c_min = min_image_length(ind)
    except Exception as exc:  # report, never raise
        notes.append(f"induced construction failed: {exc}")
        taus, g, dist, rigorous, c_min = [], 0, math.inf, False, 0.0
    if not in_first:
        notes.append("T(z) does not lie in the first branch domain")
    if not delta > 2:
        notes.append(f"expansion infimum {delta:.6g} is not > 2")
    return ValidationReport(
        z=float(z), delta=float(delta), delta_argmin=float(at), strict_expansion=bool(delta > 2),
        t_z=t_z, t_z_in_first_branch=in_first, fixed_point=fixed, neutral_fixed_point=neutral,
        distortion=float(dist), distortion_rigorous=bool(rigorous), min_image_length=float(c_min),
        return_times=taus, gcd_return_times=int(g), notes=notes,
    )
