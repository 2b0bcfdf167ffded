"""Piecewise-constant functions on interval grids (cell-average semantics)."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import ConstructionError

_GAUSS_X, _GAUSS_W = np.polynomial.legendre.leggauss(8)


def uniform_edges(lo: float, hi: float, n_cells: int) -> np.ndarray:
    if n_cells < 1 or not hi > lo:
        raise ConstructionError("need n_cells >= 1 and hi > lo")
    edges = lo + (hi - lo) * np.arange(n_cells + 1) / n_cells
    edges[0], edges[-1] = lo, hi
    return edges


@dataclass(frozen=True)
class GridFunction:
    """Cell averages of a function on a grid over [lo, hi].

    Grids are uniform unless explicit ``edges`` are supplied (full-map grids
    refined toward the neutral point).  ``values`` may be complex.
    """

    lo: float
    hi: float
    values: np.ndarray
    edges: Optional[np.ndarray] = None

    def __post_init__(self):
        vals = np.asarray(self.values)
        if not np.iscomplexobj(vals):
            vals = vals.astype(float)
        object.__setattr__(self, "values", vals)
        if self.edges is None:
            object.__setattr__(self, "edges", uniform_edges(self.lo, self.hi, vals.size))
        else:
            e = np.asarray(self.edges, dtype=float)
            if e.size != vals.size + 1 or np.any(np.diff(e) <= 0):
                raise ConstructionError("edges must be increasing with one more entry than values")
            object.__setattr__(self, "edges", e)

    @property
    def n_cells(self) -> int:
        return self.values.size

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.edges)

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    @property
    def is_uniform(self) -> bool:
        w = self.widths
        return bool(np.allclose(w, w[0], rtol=1e-9, atol=0))

    @property
    def integral(self):
        return np.sum(self.values * self.widths)

    @property
    def mass(self) -> np.ndarray:
        """Per-cell integrals."""
        return self.values * self.widths

    def l1(self, normalize: bool = True) -> float:
        """L1 norm; normalised Lebesgue measure on [lo, hi] by default."""
        total = float(np.sum(np.abs(self.values) * self.widths))
        return total / (self.hi - self.lo) if normalize else total

    def with_values(self, values) -> "GridFunction":
        return GridFunction(self.lo, self.hi, values, self.edges)

    def cumulative(self, x):
        """Integral from lo to x of the piecewise-constant function."""
        x = np.clip(np.asarray(x, dtype=float), self.lo, self.hi)
        cum = np.concatenate([[0.0], np.cumsum(self.mass)])
        k = np.clip(np.searchsorted(self.edges, x, side="right") - 1, 0, self.n_cells - 1)
        return cum[k] + self.values[k] * (x - self.edges[k])

    def integrate(self, a, b):
        """Integral over [a, b] (vectorised; clipped to [lo, hi])."""
        return self.cumulative(b) - self.cumulative(a)

    def __mul__(self, other):
        if isinstance(other, GridFunction):
            return self.with_values(self.values * other.values)
        return self.with_values(self.values * other)

    __rmul__ = __mul__

    def __add__(self, other):
        if isinstance(other, GridFunction):
            return self.with_values(self.values + other.values)
        return self.with_values(self.values + other)

    def __sub__(self, other):
        if isinstance(other, GridFunction):
            return self.with_values(self.values - other.values)
        return self.with_values(self.values - other)

    def __neg__(self):
        return self.with_values(-self.values)

    @classmethod
    def zeros(cls, lo, hi, n_cells=None, edges=None, dtype=float):
        n = n_cells if edges is None else len(edges) - 1
        return cls(lo, hi, np.zeros(n, dtype=dtype), edges)

    @classmethod
    def from_callable(cls, f: Callable, lo: float, hi: float, n_cells: Optional[int] = None,
                      edges=None) -> "GridFunction":
        """Cell averages of a smooth f by 8-point Gauss-Legendre per cell."""
        e = uniform_edges(lo, hi, n_cells) if edges is None else np.asarray(edges, dtype=float)
        a, b = e[:-1, None], e[1:, None]
        xs = 0.5 * (a + b) + 0.5 * (b - a) * _GAUSS_X[None, :]
        vals = 0.5 * (f(xs) * _GAUSS_W[None, :]).sum(axis=1)
        return cls(lo, hi, vals, None if edges is None else e)

    @classmethod
    def indicator(cls, a: float, b: float, lo: float, hi: float, n_cells: Optional[int] = None,
                  edges=None) -> "GridFunction":
        """Exact cell averages of the indicator of [a, b]."""
        e = uniform_edges(lo, hi, n_cells) if edges is None else np.asarray(edges, dtype=float)
        overlap = np.clip(np.minimum(e[1:], b) - np.maximum(e[:-1], a), 0.0, None)
        return cls(lo, hi, overlap / np.diff(e), None if edges is None else e)
