"""Exponents of local models near a neutral fixed point in dimension m.

Each model keeps only the leading nonlinear term, so inverse orbits,
inverse-Jacobian determinants and norms follow exact power laws whose
exponents feed the correlation-decay conditions.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import DomainError, NumericalError


@dataclass
class LocalModel:
    name: str
    m: int
    gamma: float
    forward: Callable
    jacobian: Callable
    constraint: Optional[Callable] = None
    radial: bool = False
    # dimension of the region volume near 0 (x^2-cusps add to it)
    volume_exponent: Optional[float] = None
    beta_prime_formula: Optional[float] = None
    default_w0: tuple = ()
    bounded_distortion: bool = False
    # radial models: T(w) = w (1 + coef |w|^gamma)
    coef: float = 1.0

    def __post_init__(self):
        if self.volume_exponent is None:
            self.volume_exponent = float(self.m)
        if not self.default_w0:
            self.default_w0 = tuple([0.2 / math.sqrt(self.m)] * self.m)


def _norm(w):
    return float(np.sqrt(np.dot(w, w)))


def radial(gamma: float, m: int) -> LocalModel:
    """T(w) = w (1 + |w|^gamma)."""
    if gamma <= 0 or m < 1:
        raise DomainError("need gamma > 0 and m >= 1")

    def fwd(w):
        w = np.asarray(w, dtype=float)
        return w * (1 + _norm(w) ** gamma)

    def jac(w):
        w = np.asarray(w, dtype=float)
        r = _norm(w)
        s = 1 + r ** gamma
        out = s * np.eye(m)
        if r > 0:
            out += gamma * r ** (gamma - 2) * np.outer(w, w)
        return out

    return LocalModel(f"radial(gamma={gamma:g},m={m})", m, gamma, fwd, jac, radial=True,
                      beta_prime_formula=m / gamma + 1, bounded_distortion=True)


def ex74(m: int = 3, gamma: float = 1.0) -> LocalModel:
    mod = radial(gamma, m)
    mod.name = f"ex74(m={m},gamma={gamma:g})"
    return mod


def cusp1d(gamma: float = 0.5, c: float = 1.0) -> LocalModel:
    """x (1 + c x^gamma) on x >= 0."""
    def fwd(w):
        x = np.asarray(w, dtype=float)
        return x * (1 + c * np.abs(x) ** gamma)

    def jac(w):
        x = float(np.asarray(w, dtype=float).ravel()[0])
        return np.array([[1 + c * (1 + gamma) * abs(x) ** gamma]])

    return LocalModel(f"cusp1d(gamma={gamma:g})", 1, gamma, fwd, jac, radial=True,
                      beta_prime_formula=1 / gamma + 1, default_w0=(0.2,), bounded_distortion=True, coef=c)


def ex71() -> LocalModel:
    """(x(1+|w|^2), y(1+|w|^2), z(1+2|w|^2)) in dimension 3."""
    def fwd(w):
        x, y, z = np.asarray(w, dtype=float)
        q = x * x + y * y + z * z
        return np.array([x * (1 + q), y * (1 + q), z * (1 + 2 * q)])

    def jac(w):
        w = np.asarray(w, dtype=float)
        q = float(w @ w)
        return np.diag([1 + q, 1 + q, 1 + 2 * q]) + np.outer(w * np.array([1, 1, 2]), 2 * w)

    return LocalModel("ex71", 3, 2.0, fwd, jac, beta_prime_formula=3.0, default_w0=(0.2, 0.2, 0.05))


def ex72(gamma: float = 1.0) -> LocalModel:
    """(x(1+|w|^gamma), y(1+2|w|^gamma)) in dimension 2."""
    def fwd(w):
        x, y = np.asarray(w, dtype=float)
        q = math.hypot(x, y) ** gamma
        return np.array([x * (1 + q), y * (1 + 2 * q)])

    def jac(w):
        w = np.asarray(w, dtype=float)
        r = _norm(w)
        q = r ** gamma
        grad = gamma * r ** (gamma - 2) * w if r > 0 else np.zeros(2)
        return np.diag([1 + q, 1 + 2 * q]) + np.outer(w * np.array([1, 2]), grad)

    return LocalModel(f"ex72(gamma={gamma:g})", 2, gamma, fwd, jac, beta_prime_formula=1 + 3 / gamma,
                      default_w0=(0.2, 0.1))


def ex73() -> LocalModel:
    """(x s, y s^2), s = 1 + x^2 + y^2, on the cusp region |y| < x^2."""
    def fwd(w):
        x, y = np.asarray(w, dtype=float)
        s = 1 + x * x + y * y
        return np.array([x * s, y * s * s])

    def jac(w):
        x, y = np.asarray(w, dtype=float)
        s = 1 + x * x + y * y
        return np.array([[s + 2 * x * x, 2 * x * y],
                         [4 * s * x * y, s * s + 4 * s * y * y]])

    def region(w):
        x, y = w
        return abs(y) < x * x

    return LocalModel("ex73", 2, 2.0, fwd, jac, constraint=region, volume_exponent=3.0,
                      beta_prime_formula=2.5, default_w0=(0.2, 0.03), bounded_distortion=True)


MODELS = {"radial": radial, "ex71": ex71, "ex72": ex72, "ex73": ex73, "ex74": ex74, "cusp1d": cusp1d}


def make_model(name: str, **params) -> LocalModel:
    if name not in MODELS:
        raise DomainError(f"unknown model {name!r}")
    return MODELS[name](**params)


def _radius_step(gamma: float, r: float, c: float = 1.0) -> float:
    """Solve s (1 + c s^gamma) = r for s in (0, r]."""
    s = r / (1 + c * r ** gamma)
    for _ in range(60):
        g = s * (1 + c * s ** gamma) - r
        d = 1 + c * (1 + gamma) * s ** gamma
        step = g / d
        s -= step
        if abs(step) <= 1e-17 * s:
            break
    return s


def inverse_orbit(model: LocalModel, w0=None, n: int = 5000, tol: float = 1e-12,
                  return_violations: bool = False):
    """w_{k+1} with T(w_{k+1}) = w_k, k < n; array of shape (n + 1, m)."""
    w0 = np.asarray(model.default_w0 if w0 is None else w0, dtype=float).reshape(model.m)
    if _norm(w0) > 0.3:
        raise DomainError("|w0| must be <= 0.3 for the local model")
    if model.constraint is not None and _norm(w0) > 0 and not model.constraint(w0):
        raise DomainError("w0 violates the model's domain constraint")
    out = np.zeros((n + 1, model.m))
    out[0] = w0
    violations = 0
    if _norm(w0) == 0:
        return (out, 0) if return_violations else out
    c = model.coef
    for k in range(n):
        tgt = out[k]
        if model.radial:
            r = _norm(tgt)
            s = _radius_step(model.gamma, r, c)
            w = tgt * (s / r)
        else:
            w = tgt.copy()
            for _ in range(60):
                res = model.forward(w) - tgt
                try:
                    step = np.linalg.solve(model.jacobian(w), res)
                except np.linalg.LinAlgError as exc:
                    raise NumericalError(f"singular Jacobian at step {k + 1}") from exc
                w = w - step
                if not np.all(np.isfinite(w)):
                    raise NumericalError(f"Newton diverged at step {k + 1}")
                if _norm(step) <= 1e-16 * _norm(w):
                    break
            if model.constraint is not None and not model.constraint(w):
                violations += 1
                w[1] = math.copysign(min(abs(w[1]), 0.999 * w[0] ** 2), w[1])
        if _norm(model.forward(w) - tgt) > tol:
            raise NumericalError(f"inverse step {k + 1} residual exceeds {tol:g}")
        out[k + 1] = w
    return (out, violations) if return_violations else out


def det_product(model: LocalModel, orbit: np.ndarray) -> np.ndarray:
    """|det DT^{-n}(w_0)| = prod_{k=1..n} |det DT(w_k)|^{-1}; entry 0 is 1."""
    dets = np.array([abs(np.linalg.det(model.jacobian(w))) for w in orbit[1:]])
    if np.any(dets == 0):
        raise NumericalError("singular Jacobian along the orbit")
    return np.exp(-np.concatenate([[0.0], np.cumsum(np.log(dets))]))


def norm_product(model: LocalModel, orbit: np.ndarray) -> np.ndarray:
    """Largest singular value of DT(w_n)^{-1} ... DT(w_1)^{-1}; entry 0 is 1."""
    acc = np.eye(model.m)
    out = np.empty(len(orbit))
    out[0] = 1.0
    for k, w in enumerate(orbit[1:], start=1):
        try:
            acc = np.linalg.solve(model.jacobian(w), acc)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"singular Jacobian at step {k}") from exc
        out[k] = np.linalg.norm(acc, 2)
    return out


def _slope(n, v, lo, hi):
    keep = (n >= lo) & (n <= hi) & (v > 0)
    return float(np.polyfit(np.log(n[keep]), np.log(v[keep]), 1)[0])


@dataclass
class ExponentReport:
    example: str
    m: int
    gamma: float
    alpha: float
    window: tuple
    beta_prime: float
    beta_prime_formula: Optional[float]
    tail_exponent: float
    tail_exponent_formula: float
    norm_slope: float
    beta_E: float
    beta_E_formula: Optional[float]
    beta_D: float
    required_strict: float
    satisfied_strict: bool
    satisfied_as_applied: bool
    finite_measure: bool
    predicted_decay_exponent: Optional[float]
    bounded_distortion: bool
    violations: int = 0
    notes: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def exponent_report(model: LocalModel, n_max: int = 5000, alpha: float = 1.0, w0=None,
                    bounded_distortion: Optional[bool] = None) -> ExponentReport:
    """Fitted exponents and the composite decay conditions.

    beta_E = beta' * m / (m + alpha) - 1 (the factor m / (m + alpha) is
    dropped under bounded distortion); beta_D = alpha * sigma - 1 with sigma
    the norm decay exponent.  The strict condition is
    beta_E >= max(2, m_eff / gamma - 1); the applied one only asks
    beta_E > 1 and beta_E >= m_eff / gamma - 1.
    """
    bd = model.bounded_distortion if bounded_distortion is None else bounded_distortion
    orbit, viol = inverse_orbit(model, w0, n_max, return_violations=True)
    n = np.arange(n_max + 1, dtype=float)
    lo, hi = n_max / 50, n_max
    dets = det_product(model, orbit)
    norms = norm_product(model, orbit)
    radii = np.sqrt((orbit ** 2).sum(axis=1))
    beta_p = -_slope(n, dets, lo, hi)
    m_eff = model.volume_exponent
    tail = -_slope(n, radii ** m_eff, lo, hi)
    sigma = -_slope(n, norms, lo, hi)
    factor = 1.0 if bd else model.m / (model.m + alpha)
    beta_e = beta_p * factor - 1
    beta_e_formula = None if model.beta_prime_formula is None else model.beta_prime_formula * factor - 1
    beta_d = alpha * sigma - 1
    need = m_eff / model.gamma - 1
    finite = m_eff / model.gamma > 1
    strict = bool(finite and beta_e >= max(2.0, need))
    applied = bool(finite and beta_e > 1 and beta_e >= need)
    notes = []
    if not finite:
        notes.append("m/gamma <= 1: invariant measure is not finite")
    if viol:
        notes.append(f"{viol} inverse iterates left the domain constraint")
    return ExponentReport(
        example=model.name, m=model.m, gamma=model.gamma, alpha=alpha, window=(lo, hi),
        beta_prime=beta_p, beta_prime_formula=model.beta_prime_formula, tail_exponent=tail,
        tail_exponent_formula=m_eff / model.gamma, norm_slope=-sigma, beta_E=beta_e,
        beta_E_formula=beta_e_formula, beta_D=beta_d, required_strict=max(2.0, need),
        satisfied_strict=strict, satisfied_as_applied=applied, finite_measure=finite,
        predicted_decay_exponent=need if applied else None, bounded_distortion=bd,
        violations=viol, notes=notes,
    )


def orbit_table(model: LocalModel, w0=None, n: int = 5000) -> dict:
    """Columns n, |w_n|, det, norm for CSV output."""
    orbit = inverse_orbit(model, w0, n)
    return {"n": np.arange(n + 1), "radius": np.sqrt((orbit ** 2).sum(axis=1)),
            "det": det_product(model, orbit), "norm": norm_product(model, orbit)}
