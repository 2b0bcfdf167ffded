"""Correlation functions by the operator method and by Monte Carlo, the
leading renewal term, the F_beta envelope and log-log rate fits."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ContractError, DomainError, InsufficientDataError, RangeError
from .grid import GridFunction
from .induced import InducedSystem, return_time_masses, tail_exponent, tail_measures
from .maps import BranchMap


@dataclass
class DecaySeries:
    n_values: list
    cov_values: list
    method: str = "operator"
    observables: dict = field(default_factory=dict)
    stderr: Optional[list] = None

    def __post_init__(self):
        n = list(self.n_values)
        if any(b <= a for a, b in zip(n, n[1:])):
            raise ContractError("n_values must be strictly increasing")
        if self.method.startswith("monte_carlo") and self.stderr is None:
            raise ContractError("Monte Carlo series need standard errors")


def xhat_density(h_hat: GridFunction, mu_Xhat: float) -> GridFunction:
    """Invariant density of the full map restricted to X^ (Lebesgue reference)."""
    return h_hat * (mu_Xhat / (h_hat.hi - h_hat.lo))


def _check_support(op, f: GridFunction):
    if op.kind == "full" and op.ind is not None and op.ind.z > 0:
        inside = op.edges[1:] <= op.ind.z
        if np.any(f.values[inside] != 0):
            raise ContractError("observables must vanish outside X^")


def covariance_series(op, h: GridFunction, f: GridFunction, g: GridFunction, ns: Sequence[int]) -> np.ndarray:
    """Cov(f, g o T^n) for every n in ``ns``.

    On a full-map operator ``h`` is the invariant density on [0, 1] and the
    sum is computed by repeated pushes.  On an induced operator ``h`` is the
    invariant density restricted to X^ (see ``xhat_density``) and the X^
    to X^ transfer T_n is built by the renewal recursion
    T_n = sum_k T_{n-k} R_k, one stacked sparse product per step.
    """
    ns = np.asarray(ns, dtype=int)
    if ns.size == 0:
        return np.zeros(0)
    if np.any(ns < 0):
        raise RangeError("n must be >= 0")
    for obs in (f, g, h):
        op._check_grid(obs)
    _check_support(op, f)
    _check_support(op, g)
    w = op.widths
    mf = float(np.sum(f.values * h.values * w))
    mg = float(np.sum(g.values * h.values * w))
    v0 = f.values * h.values * w
    n_top = int(ns.max())
    out = np.empty(n_top + 1)
    out[0] = v0 @ g.values
    if op.kind == "full":
        v = v0
        for n in range(1, n_top + 1):
            v = op.push(v)
            out[n] = v @ g.values
    else:
        N = op.n_cells
        k = min(op.tau_max, n_top) if n_top > 0 else 1
        st = op.stacked(k).T.tocsr()
        future = np.zeros((n_top + 1, N))
        v = v0
        for j in range(n_top + 1):
            if j > 0:
                v = future[j]
                out[j] = v @ g.values
            span = min(k, n_top - j)
            if span <= 0:
                continue
            blocks = (st[: span * N] @ v).reshape(span, N)
            future[j + 1: j + 1 + span] += blocks
    return out[ns] - mf * mg


def covariance_operator(op, h: GridFunction, f: GridFunction, g: GridFunction, n: int) -> float:
    """integral of P^n(f h) g minus mu(f) mu(g)."""
    return float(covariance_series(op, h, f, g, [n])[0])


@dataclass
class McResult:
    estimate: float
    stderr: float
    restarts: int


def covariance_mc(tmap: BranchMap, f: Callable, g: Callable, n: int, samples: int = 10 ** 6,
                  burnin: int = 1000, seed: int = 0, chains: int = 1024, batches: int = 64,
                  dither: float = 2.0 ** -52) -> McResult:
    """Time-series estimate of Cov(f, g o T^n) from parallel orbits.

    Each chain runs ``burnin`` steps, then contributes the pairs
    (x_k, x_{k+n}).  Chains are grouped into ``batches`` groups for the
    batch-means error.  A dither of one ulp per step keeps floating-point
    orbits of expanding maps from collapsing onto 0; a chain that still
    lands on exact 0 is restarted and counted.
    """
    if samples < 1000:
        raise DomainError("samples must be >= 1000")
    if n < 0:
        raise RangeError("n must be >= 0")
    if chains % batches:
        raise DomainError("chains must be a multiple of batches")
    rng = np.random.default_rng(seed)
    length = -(-samples // chains)
    x = rng.random(chains)
    restarts = 0

    def step(x):
        nonlocal restarts
        y = tmap(x) + dither * rng.random(x.size)
        y = np.where(y > 1.0, 2.0 - y, y)
        dead = y == 0.0
        if np.any(dead):
            restarts += int(dead.sum())
            y[dead] = rng.random(int(dead.sum()))
        return y

    for _ in range(burnin):
        x = step(x)
    hist = np.empty((n + 1, chains))
    hist[0] = x
    for k in range(1, n + 1):
        hist[k] = x = step(x)
    s_fg = np.zeros(chains)
    s_f = np.zeros(chains)
    s_g = np.zeros(chains)
    for k in range(length):
        head = hist[k % (n + 1)]
        fx = f(head)
        gx = g(x)
        s_fg += fx * gx
        s_f += fx
        s_g += gx
        x = step(x)
        hist[(k + n + 1) % (n + 1)] = x
    per = chains // batches
    b_fg = s_fg.reshape(batches, per).sum(1) / (per * length)
    b_f = s_f.reshape(batches, per).sum(1) / (per * length)
    b_g = s_g.reshape(batches, per).sum(1) / (per * length)
    est_b = b_fg - b_f * b_g
    est = float(s_fg.sum() / (chains * length) - s_f.sum() * s_g.sum() / (chains * length) ** 2)
    return McResult(estimate=est, stderr=float(est_b.std(ddof=1) / math.sqrt(batches)), restarts=restarts)


def leading_term_series(ind: InducedSystem, h_hat: GridFunction, mu_Xhat: float,
                        f: GridFunction, g: GridFunction) -> tuple[np.ndarray, float]:
    """sum_{k=n+1}^{n_max} mu(tau > k) mu(f) mu(g) for n = 0..n_max - 1.

    Returns the series and a bound on the dropped part sum_{k > n_max}.
    """
    hx = xhat_density(h_hat, mu_Xhat)
    mf = float(np.sum(f.values * hx.values * f.widths))
    mg = float(np.sum(g.values * hx.values * g.widths))
    tails = mu_Xhat * tail_measures(ind, h_hat)
    # s[n] = sum_{k=n+1}^{n_max} tails[k]
    rev = np.cumsum(tails[::-1])[::-1]
    s = np.append(rev[1:], 0.0)[: ind.n_max]
    p = tail_exponent(ind)
    t_n = tails[ind.n_max]
    bound = math.inf if not p > 1 else t_n * ind.n_max / (p - 1.0)
    return s * mf * mg, bound * abs(mf * mg)


def predicted_leading_term(ind: InducedSystem, h_hat: GridFunction, mu_Xhat: float,
                           f: GridFunction, g: GridFunction, n: int) -> tuple[float, float]:
    """(leading renewal term at n, bound on its truncated part)."""
    if not 0 <= n <= ind.n_max - 1:
        raise RangeError(f"n must be in [0, {ind.n_max - 1}]")
    s, bound = leading_term_series(ind, h_hat, mu_Xhat, f, g)
    return float(s[n]), bound


def f_beta_envelope(n: int, beta: float) -> float:
    """1/n^beta (beta > 2), log(n)/n^2 (beta = 2), 1/n^(2 beta - 2) (1 < beta < 2)."""
    if not beta > 1:
        raise DomainError("beta must be > 1")
    if n < 2:
        raise RangeError("n must be >= 2")
    if beta > 2:
        return float(n) ** (-beta)
    if beta == 2:
        return math.log(n) / float(n) ** 2
    return float(n) ** (-(2 * beta - 2))


@dataclass
class RateFit:
    slope: float
    intercept: float
    window: tuple
    max_abs_residual: float
    n_points: int

    def as_dict(self) -> dict:
        return {"slope": self.slope, "intercept": self.intercept, "window": list(self.window),
                "max_abs_residual": self.max_abs_residual, "n_points": self.n_points}


def fit_rate(ns, values=None, window: Optional[tuple] = None) -> RateFit:
    """Least-squares slope of log|value| against log n on the window.

    Accepts a DecaySeries or a pair of arrays; only strictly positive values
    are used.
    """
    if isinstance(ns, DecaySeries):
        ns, values = ns.n_values, ns.cov_values
    n = np.asarray(ns, dtype=float)
    v = np.real(np.asarray(values, dtype=complex if np.iscomplexobj(values) else float))
    lo, hi = window if window is not None else (n.min(), n.max())
    keep = (n >= lo) & (n <= hi) & (v > 0) & np.isfinite(v)
    if keep.sum() < 5:
        raise InsufficientDataError(f"only {int(keep.sum())} positive points in window {window}")
    x, y = np.log(n[keep]), np.log(v[keep])
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    return RateFit(float(slope), float(intercept), (float(lo), float(hi)), float(np.abs(resid).max()),
                   int(keep.sum()))


def write_series_csv(path, columns: dict) -> None:
    """Write equal-length columns; floats use repr for byte-stable output."""
    names = list(columns)
    rows = zip(*(columns[k] for k in names))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
