"""Plant model, augmented state, class-K rate functions, and gradient utilities.

The controlled plant is  xdot = F(x, u) + ell(x) d  with state x in R^n, input
u in R^m and an additive disturbance d in R^p entering through the channel
matrix ell(x) (n x p). The true disturbance signal d_true(t) exists on the
model for simulation and logging only; filters and observers never read it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ContractViolationError, NumericalDomainError

Array = np.ndarray


def _as_vector(val, length: int, name: str) -> Array:
    v = np.asarray(val, dtype=float)
    if v.ndim != 1 or v.shape[0] != length:
        raise ContractViolationError(
            f"{name}: expected a vector of length {length}, got shape {v.shape}"
        )
    return v


@dataclass(frozen=True)
class SystemModel:
    """Controlled plant xdot = F(x,u) + ell(x) d.

    F and ell must evaluate on any finite point of the scenario's domain box;
    d_true is the simulation-only ground-truth disturbance signal.
    """

    n: int
    m: int
    p: int
    F: Callable[[Array, Array], Array]
    ell: Callable[[Array], Array]
    d_true: Callable[[float], Array] = None  # type: ignore[assignment]

    def __post_init__(self):
        if self.d_true is None:
            zero = np.zeros(self.p)
            object.__setattr__(self, "d_true", lambda t: zero)


def eval_dynamics(model: SystemModel, x, u, d) -> Array:
    """State derivative F(x,u) + ell(x) d, with dimension checks on every argument."""
    x = _as_vector(x, model.n, "x")
    u = _as_vector(u, model.m, "u")
    d = _as_vector(d, model.p, "d")
    fx = np.asarray(model.F(x, u), dtype=float)
    if fx.shape != (model.n,):
        raise ContractViolationError(
            f"model.F: expected output of shape ({model.n},), got {fx.shape}"
        )
    lx = np.asarray(model.ell(x), dtype=float)
    if lx.shape != (model.n, model.p):
        raise ContractViolationError(
            f"model.ell: expected output of shape ({model.n}, {model.p}), got {lx.shape}"
        )
    return fx + lx @ d


def finite_diff_gradient(f: Callable[[Array], float], point, step: float) -> Array:
    """Central-difference gradient of a scalar function of a k-vector.

    Exact (up to roundoff) on polynomials of degree <= 2. Raises
    NumericalDomainError if f returns a non-finite value near `point`.
    """
    if step <= 0.0:
        raise ContractViolationError(f"step: must be > 0, got {step}")
    point = np.asarray(point, dtype=float)
    grad = np.empty_like(point)
    for i in range(point.shape[0]):
        hi = point.copy()
        lo = point.copy()
        hi[i] += step
        lo[i] -= step
        f_hi = float(f(hi))
        f_lo = float(f(lo))
        if not (np.isfinite(f_hi) and np.isfinite(f_lo)):
            raise NumericalDomainError(
                f"finite_diff_gradient: non-finite value near component {i} of {point}"
            )
        grad[i] = (f_hi - f_lo) / (2.0 * step)
    return grad


@dataclass(frozen=True)
class ClassKFunction:
    """Scalar rate function: continuous, strictly increasing, zero at zero.

    `linear` and `cubic` cover everything the benchmarks need; `custom` wraps
    an arbitrary scalar map (the caller owns the class-K property, which the
    test harness spot-checks on a grid).
    """

    kind: str
    fn: Callable[[float], float]
    param: float = 0.0

    @staticmethod
    def linear(slope: float) -> "ClassKFunction":
        if slope <= 0.0:
            raise ContractViolationError(f"linear class-K slope must be > 0, got {slope}")
        return ClassKFunction("linear", lambda s: slope * s, slope)

    @staticmethod
    def cubic(coef: float) -> "ClassKFunction":
        if coef <= 0.0:
            raise ContractViolationError(f"cubic class-K coefficient must be > 0, got {coef}")
        return ClassKFunction("cubic", lambda s: coef * s * s * s, coef)

    @staticmethod
    def custom(fn: Callable[[float], float]) -> "ClassKFunction":
        return ClassKFunction("custom", fn)

    def __call__(self, s: float) -> float:
        return self.fn(s)


@dataclass(frozen=True)
class DisturbanceBounds:
    """Known bounds on the disturbance magnitude (k0) and its rate (k1)."""

    k0: float
    k1: float

    def __post_init__(self):
        if self.k0 < 0.0 or self.k1 < 0.0:
            raise ContractViolationError(
                f"disturbance bounds must be nonnegative, got k0={self.k0}, k1={self.k1}"
            )


@dataclass(frozen=True)
class AugmentedState:
    """Stacked closed-loop state (x, u, r): plant state, integrated input, observer state."""

    x: Array
    u: Array
    r: Array

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float))
        object.__setattr__(self, "u", np.asarray(self.u, dtype=float))
        object.__setattr__(self, "r", np.asarray(self.r, dtype=float))

    def as_vector(self) -> Array:
        return np.concatenate([self.x, self.u, self.r])

    @staticmethod
    def from_vector(z: Array, n: int, m: int, p: int) -> "AugmentedState":
        z = np.asarray(z, dtype=float)
        if z.shape != (n + m + p,):
            raise ContractViolationError(
                f"z: expected a vector of length {n + m + p}, got shape {z.shape}"
            )
        return AugmentedState(z[:n].copy(), z[n:n + m].copy(), z[n + m:].copy())
