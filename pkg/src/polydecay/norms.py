"""Variation and oscillation seminorms on grid functions, and an empirical
Lasota-Yorke probe for Ulam operators."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np
from scipy.ndimage import maximum_filter1d, minimum_filter1d

from .errors import DomainError, ResolutionError, UnsupportedError
from .grid import GridFunction

__all__ = ["GridFunction", "SeminormParams", "variation", "osc_seminorm", "random_step_function",
           "LYReport", "ly_probe", "theory_constants"]


@dataclass(frozen=True)
class SeminormParams:
    """Exponent alpha and probe radii (ascending, largest = eps0)."""

    alpha: float
    eps0: float
    eps_grid: tuple

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise DomainError("alpha must be in (0, 1]")
        if not self.eps0 > 0:
            raise DomainError("eps0 must be positive")
        g = tuple(float(e) for e in self.eps_grid)
        if not g or any(b <= a for a, b in zip(g, g[1:])) or g[0] <= 0:
            raise DomainError("eps_grid must be positive and strictly increasing")
        if not math.isclose(g[-1], self.eps0, rel_tol=1e-12):
            raise DomainError("largest probe radius must equal eps0")
        object.__setattr__(self, "eps_grid", g)

    @classmethod
    def geometric(cls, alpha: float, eps0: float, eps_min: float, n: int = 12) -> "SeminormParams":
        return cls(alpha, eps0, tuple(np.geomspace(eps_min, eps0, n)))


def variation(f: GridFunction) -> float:
    """Total variation of the step function: sum of jump sizes."""
    return float(np.sum(np.abs(np.diff(f.values))))


def osc_seminorm(f: GridFunction, p: SeminormParams, normalize: bool = False) -> float:
    """max over eps of eps^{-alpha} * integral of osc(f, B_eps(x)).

    The ball around a cell is every cell whose centre lies within eps, so
    the window is truncated at the ends of the grid.
    """
    if not f.is_uniform:
        raise UnsupportedError("oscillation seminorm needs a uniform grid")
    w = (f.hi - f.lo) / f.n_cells
    if p.eps_grid[0] < w * (1 - 1e-9):
        raise ResolutionError(f"probe radius {p.eps_grid[0]:.3g} below cell width {w:.3g}")
    v = f.values
    if np.iscomplexobj(v):
        raise UnsupportedError("oscillation of complex functions is not defined here")
    best = 0.0
    for eps in p.eps_grid:
        r = int(math.floor(eps / w * (1 + 1e-12)))
        size = 2 * r + 1
        osc = maximum_filter1d(v, size, mode="nearest") - minimum_filter1d(v, size, mode="nearest")
        best = max(best, eps ** (-p.alpha) * float(np.sum(osc)) * w)
    return best / (f.hi - f.lo) if normalize else best


def random_step_function(rng: np.random.Generator, lo: float, hi: float, n_cells: int,
                         max_jumps: int = 20, edges=None) -> GridFunction:
    """Step function with at most ``max_jumps`` grid-aligned jumps, values in [-1, 1]."""
    k = int(rng.integers(0, max_jumps + 1))
    cuts = np.unique(rng.integers(1, n_cells, size=k)) if n_cells > 1 else np.array([], dtype=int)
    levels = rng.uniform(-1.0, 1.0, size=cuts.size + 1)
    seg = np.searchsorted(cuts, np.arange(n_cells), side="right")
    return GridFunction(lo, hi, levels[seg], edges)


@dataclass
class LYReport:
    eta_hat: float
    D_hat: float
    eta_theory: float
    D_theory: float
    worst_ratio: float
    violations: list = field(default_factory=list)
    trials: int = 0
    slack: float = 1.1

    def as_dict(self) -> dict:
        return {
            "eta_hat": self.eta_hat, "D_hat": self.D_hat,
            "eta_theory": self.eta_theory, "D_theory": self.D_theory,
            "worst_ratio": self.worst_ratio, "violations": self.violations,
            "trials": self.trials, "slack": self.slack,
        }


def theory_constants(ind) -> tuple[float, float]:
    """(eta, D) = (2 / Delta, 2 C + 2 / c) from the inducing data."""
    from .induced import distortion_bound, min_image_length
    from .maps import expansion_infimum

    delta = expansion_infimum(ind.map, ind.z)[0]
    c_dist = distortion_bound(ind)[0]
    c_img = min_image_length(ind)
    return 2.0 / delta, 2.0 * c_dist + 2.0 / c_img


def ly_probe(op, norm: Union[str, SeminormParams] = "bv", trials: int = 500, seed: int = 0,
             eta: float = None, D: float = None, slack: float = 1.1, max_jumps: int = 20) -> LYReport:
    """Check |P f| <= eta |f| + D ||f||_1 on random step functions.

    The theoretical pair defaults to the inducing data of ``op.ind``.  The
    fitted pair is the envelope of the trials: eta_hat is the least eta
    consistent with the theoretical D, then D_hat the least D given eta_hat.
    """
    if trials < 1:
        raise DomainError("trials must be >= 1")
    if eta is None or D is None:
        eta_t, d_t = theory_constants(op.ind)
        eta = eta_t if eta is None else eta
        D = d_t if D is None else D
    if norm == "bv":
        semi = variation
    elif isinstance(norm, SeminormParams):
        def semi(g):
            return osc_seminorm(g, norm, normalize=True)
    else:
        raise DomainError(f"unknown norm {norm!r}")
    seeds = np.random.SeedSequence(seed).spawn(trials)
    vf, vp, l1 = np.empty(trials), np.empty(trials), np.empty(trials)
    for t, ss in enumerate(seeds):
        rng = np.random.default_rng(ss)
        f = random_step_function(rng, op.lo, op.hi, op.n_cells, max_jumps, op.edges)
        pf = op.apply(f)
        vf[t], vp[t], l1[t] = semi(f), semi(pf), f.l1()
    rhs = eta * vf + D * l1
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(rhs > 0, vp / rhs, np.where(vp > 0, np.inf, 0.0))
    bad = np.flatnonzero(vp > slack * rhs)
    violations = [{"trial": int(t), "seed_entropy": int(seeds[t].entropy), "spawn_key": list(seeds[t].spawn_key),
                   "lhs": float(vp[t]), "rhs": float(rhs[t])} for t in bad]
    pos = vf > 0
    eta_hat = float(max(0.0, np.max((vp[pos] - D * l1[pos]) / vf[pos]))) if np.any(pos) else 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        dd = np.where(l1 > 0, (vp - eta_hat * vf) / l1, 0.0)
    D_hat = float(max(0.0, np.max(dd)))
    return LYReport(eta_hat=eta_hat, D_hat=D_hat, eta_theory=float(eta), D_theory=float(D),
                    worst_ratio=float(np.max(ratio)), violations=violations, trials=trials, slack=slack)
