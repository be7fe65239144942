"""Nonlinear disturbance observer and its estimation-error envelope.

The observer estimates the additive disturbance of xdot = F(x,u) + ell(x) d as

    d_hat = r + beta * q(x),      rdot = -beta * L_d(x) (F(x,u) + ell(x) d_hat)

with a gain map L_d (p x n) and a potential q with dq/dx = L_d. Under known
bounds ||d|| <= k0, ||ddot|| <= k1 the estimation error e_d = d_hat - d obeys

    ||e_d(t)||^2 <= E0^2 exp(-2 lam t) + k1^2 (1 - exp(-2 lam t)) / (2 mu1 lam)

with lam = beta - mu1/2, provided E0 bounds the initial error and the gain
condition sym(L_d ell) >= I holds along trajectories. The square root of the
right-hand side is the time-varying envelope consumed by the robust filter
margin.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from .errors import ConfigurationError, ContractViolationError
from .model import Array, DisturbanceBounds, SystemModel

log = logging.getLogger(__name__)


def projection_gain(ell: Array) -> Array:
    """Least-squares gain -(ell^T ell)^{-1} ell^T for a full-column-rank channel."""
    ell = np.asarray(ell, dtype=float)
    return -np.linalg.solve(ell.T @ ell, ell.T)


@dataclass(frozen=True)
class ObserverConfig:
    """Observer gains plus the constants of the error envelope.

    L_d may be a constant p x n matrix or a state map; for a constant matrix
    the potential defaults to q(x) = L_d x (the unique potential with
    dq/dx = L_d up to a constant absorbed into r(0)).
    """

    beta: float
    L_d: Union[Array, Callable[[Array], Array]]
    mu1: float
    e_d0_bound: float
    bounds: DisturbanceBounds
    q_fn: Callable[[Array], Array] = None  # type: ignore[assignment]

    def __post_init__(self):
        if self.beta <= 0.0:
            raise ConfigurationError(f"observer gain beta must be > 0, got {self.beta}")
        if not (0.0 < self.mu1 < 2.0 * self.beta):
            raise ConfigurationError(
                f"mu1 must satisfy 0 < mu1 < 2*beta, got mu1={self.mu1}, beta={self.beta}"
            )
        if self.e_d0_bound < 0.0:
            raise ConfigurationError(f"e_d0_bound must be >= 0, got {self.e_d0_bound}")
        if callable(self.L_d):
            object.__setattr__(self, "_ld_fn", self.L_d)
            if self.q_fn is None:
                raise ConfigurationError("q_fn is required when L_d is a state map")
        else:
            mat = np.asarray(self.L_d, dtype=float)
            object.__setattr__(self, "L_d", mat)
            object.__setattr__(self, "_ld_fn", lambda x, _mat=mat: _mat)
            if self.q_fn is None:
                object.__setattr__(self, "q_fn", lambda x, _mat=mat: _mat @ x)

    @property
    def lam(self) -> float:
        return self.beta - 0.5 * self.mu1

    def gain_at(self, x: Array) -> Array:
        return self._ld_fn(x)  # type: ignore[attr-defined]


@dataclass
class ObserverState:
    """Internal observer vector r; owned by the simulation loop."""

    r: Array

    def __post_init__(self):
        self.r = np.asarray(self.r, dtype=float)


def disturbance_estimate(cfg: ObserverConfig, state: ObserverState, x: Array) -> Array:
    """Current estimate d_hat = r + beta * q(x)."""
    return state.r + cfg.beta * np.asarray(cfg.q_fn(x), dtype=float)


def observer_rhs(cfg: ObserverConfig, model: SystemModel, x: Array, u: Array,
                 state: ObserverState) -> Array:
    """rdot = -beta * L_d(x) (F(x,u) + ell(x) d_hat)."""
    d_hat = disturbance_estimate(cfg, state, x)
    drift = np.asarray(model.F(x, u), dtype=float) + np.asarray(model.ell(x), dtype=float) @ d_hat
    return -cfg.beta * (cfg.gain_at(x) @ drift)


def error_envelope(cfg: ObserverConfig, t: float) -> float:
    """Upper bound on ||d_hat(t) - d(t)|| from the envelope constants.

    Equals e_d0_bound at t = 0 and approaches k1 / sqrt(2 mu1 lam) as t grows.
    """
    if t < 0.0:
        raise ContractViolationError(f"t must be >= 0, got {t}")
    two_ml = 2.0 * cfg.mu1 * cfg.lam
    decay = math.exp(-2.0 * cfg.lam * t)
    e0 = cfg.e_d0_bound
    k1 = cfg.bounds.k1
    return math.sqrt((two_ml * e0 * e0 * decay + k1 * k1 * (1.0 - decay)) / two_ml)


def robustness_margin(cfg: ObserverConfig, grad_h_x: Array, model: SystemModel,
                      x: Array, t: float) -> float:
    """Margin ||dh/dx ell(x)|| * envelope(t) added to a barrier constraint.

    Zero whenever the barrier gradient is orthogonal to the disturbance channel.
    """
    row = np.asarray(grad_h_x, dtype=float) @ np.asarray(model.ell(x), dtype=float)
    sensitivity = float(np.linalg.norm(row))
    if sensitivity == 0.0:
        return 0.0
    return sensitivity * error_envelope(cfg, t)


def default_initial_error_bound(bounds: DisturbanceBounds, d_hat0: Array) -> float:
    """Tightest controller-side bound on ||e_d(0)||: k0 + ||d_hat(0)||.

    d(0) is unknown but bounded by k0, so this is valid for any initial guess.
    """
    return bounds.k0 + float(np.linalg.norm(np.asarray(d_hat0, dtype=float)))


def check_gain_condition(cfg: ObserverConfig, model: SystemModel, samples) -> float:
    """Smallest eigenvalue of sym(L_d ell) - I over sampled states.

    The envelope derivation needs e^T (L_d ell) e >= ||e||^2; a negative return
    value means the supplied gains do not certify the envelope. Logged as a
    warning rather than raised: benchmark gain choices are kept runnable.
    """
    worst = math.inf
    for x in samples:
        x = np.asarray(x, dtype=float)
        mat = cfg.gain_at(x) @ np.asarray(model.ell(x), dtype=float)
        sym = 0.5 * (mat + mat.T)
        margin = float(np.linalg.eigvalsh(sym)[0]) - 1.0
        worst = min(worst, margin)
    if worst < -1e-9:
        log.warning(
            "observer gain condition sym(L_d ell) >= I fails on sampled states "
            "(worst margin %.3g); the error envelope is not certified", worst,
        )
    return worst
