"""Least-norm safety correction: min ||v||^2 subject to half-space constraints.

Each active barrier contributes one constraint p^T v >= rhs. A single
constraint has the closed form

    v* = 0                     if rhs <= 0
    v* = (rhs / ||p||^2) p     if rhs > 0 and p != 0
    infeasible                 if rhs > 0 and p == 0

(the last case means the supplied barrier is not valid at this point).
Several simultaneous constraints are solved exactly by enumerating active
subsets: the minimizer lies either at v = 0 or on a face where it equals the
least-norm solution of the active equalities with nonnegative multipliers, so
checking every subset of size <= m and keeping the feasible candidate of
least norm is exact. Constraint counts stay tiny (<= 8 enforced), making
enumeration both exact and fast.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .barriers import EPS_P, BarrierChain, BarrierSpec
from .errors import ConfigurationError
from .model import Array, SystemModel
from .observer import (ObserverConfig, ObserverState, disturbance_estimate,
                       error_envelope)

FEAS_TOL = 1e-9  # constraint slack tolerance for accepting a candidate


@dataclass(frozen=True)
class FilterConstraint:
    """One half-space p^T v >= rhs, tagged with the barrier that produced it."""

    p_row: Array
    rhs: float
    label: str = "h"

    def __post_init__(self):
        object.__setattr__(self, "p_row", np.atleast_1d(np.asarray(self.p_row, dtype=float)))

    def slack(self, v: Array) -> float:
        return float(self.p_row @ v) - self.rhs


@dataclass
class FilterResult:
    """Solution of the safety QP (or the infeasibility verdict)."""

    v_star: Array
    active_labels: list = field(default_factory=list)
    infeasible: bool = False

    @property
    def v_norm(self) -> float:
        return float(np.linalg.norm(self.v_star))


def solve_single(p_row: Array, f: float, label: str = "h") -> FilterResult:
    """Closed-form least-norm solution for one constraint p^T v >= f."""
    p = np.atleast_1d(np.asarray(p_row, dtype=float))
    if f <= 0.0:
        return FilterResult(np.zeros_like(p))
    pp = float(p @ p)
    if pp <= EPS_P * EPS_P:
        return FilterResult(np.zeros_like(p), infeasible=True)
    return FilterResult((f / pp) * p, active_labels=[label])


def _feas_scale(rhs_abs: float, pv_abs: float) -> float:
    return max(1.0, rhs_abs, pv_abs)


def _solve_multi_1d(constraints: Sequence[FilterConstraint]) -> FilterResult:
    """Scalar specialization of the subset enumeration (size-1 subsets only)."""
    ps = [float(c.p_row[0]) for c in constraints]
    rs = [c.rhs for c in constraints]
    if any(abs(p) <= EPS_P and r > 0.0 for p, r in zip(ps, rs)):
        return FilterResult(np.zeros(1), infeasible=True)
    best = None
    if all(r <= 0.0 for r in rs):
        best = 0.0
    for p, r in zip(ps, rs):
        if abs(p) <= EPS_P:
            continue
        v = r / (p * p) * p
        if best is not None and abs(v) >= abs(best):
            continue
        ok = True
        for pk, rk in zip(ps, rs):
            pv = pk * v
            if pv - rk < -FEAS_TOL * _feas_scale(abs(rk), abs(pv)):
                ok = False
                break
        if ok:
            best = v
    if best is None:
        return FilterResult(np.zeros(1), infeasible=True)
    active = [c.label for pk, rk, c in zip(ps, rs, constraints)
              if abs(pk * best - rk) <= FEAS_TOL * _feas_scale(abs(rk), abs(pk * best))]
    return FilterResult(np.array([best]), active_labels=active)


def solve_multi(constraints: Sequence[FilterConstraint]) -> FilterResult:
    """Exact least-norm point of the intersection of up to 8 half-spaces.

    Enumerates active subsets of size <= m, solves the equality-constrained
    least-norm system through the Gram matrix of each subset, and keeps the
    feasible candidate of least norm (the minimizer always lies on such a
    subset, so this is exact). Reduces to solve_single for one constraint.
    Returns the infeasible flag when no candidate satisfies every constraint.
    """
    constraints = list(constraints)
    if len(constraints) > 8:
        raise ConfigurationError(f"at most 8 constraints supported, got {len(constraints)}")
    if not constraints:
        return FilterResult(np.zeros(0))
    m = constraints[0].p_row.shape[0]
    if m == 1:
        return _solve_multi_1d(constraints)
    rows = np.vstack([c.p_row for c in constraints])
    rhs = np.array([c.rhs for c in constraints])

    # A constraint with no normal and positive rhs cannot be satisfied by any v.
    norms = np.linalg.norm(rows, axis=1)
    if np.any((norms <= EPS_P) & (rhs > 0.0)):
        return FilterResult(np.zeros(m), infeasible=True)

    best: Optional[Array] = None
    best_sq = np.inf
    if np.all(rhs <= 0.0):
        best = np.zeros(m)
        best_sq = 0.0
    indices = [i for i in range(len(constraints)) if norms[i] > EPS_P]
    for size in range(1, min(m, len(indices)) + 1):
        for subset in itertools.combinations(indices, size):
            sub = rows[list(subset)]
            gram = sub @ sub.T
            try:
                lam = np.linalg.solve(gram, rhs[list(subset)])
            except np.linalg.LinAlgError:
                continue  # dependent subset; covered by a smaller one
            v = sub.T @ lam
            sq = float(v @ v)
            if sq >= best_sq:
                continue
            # Tolerance scales with constraint magnitude: large-scale rows
            # accumulate roundoff proportional to |rhs| and ||p|| ||v||.
            scale = np.maximum(1.0, np.maximum(np.abs(rhs), norms * np.sqrt(sq)))
            if np.all(rows @ v - rhs >= -FEAS_TOL * scale):
                best = v
                best_sq = sq
    if best is None:
        return FilterResult(np.zeros(m), infeasible=True)
    v_norm = float(np.sqrt(best_sq))
    active = [
        c.label for c, nrm in zip(constraints, norms)
        if abs(c.slack(best)) <= FEAS_TOL * _feas_scale(abs(c.rhs), nrm * v_norm)
    ]
    return FilterResult(best, active_labels=active)


def _channel_margin(gx: Array, lx: Array, envelope: float) -> float:
    if envelope == 0.0:
        return 0.0
    row = gx @ lx
    return float(np.sqrt(row @ row)) * envelope


def build_constraints(model: SystemModel,
                      barriers: Sequence[BarrierSpec],
                      chain: Optional[BarrierChain],
                      phi: Array, x: Array, u: Array, d_hat: Array, t: float,
                      obs_cfg: Optional[ObserverConfig],
                      with_margins: bool = True) -> tuple:
    """Assemble the per-barrier constraints plus diagnostics.

    Plain barriers contribute p^T v >= deficit + margin(grad h). A chain
    contributes only its top-level constraint, with the margin evaluated on
    the gradient of the level below (the level whose invariance the top level
    certifies). Returns (constraints, barrier_values, margin_max).
    """
    fx = np.asarray(model.F(x, u), dtype=float)
    lx = np.asarray(model.ell(x), dtype=float)
    drift = fx + lx @ d_hat
    envelope = (error_envelope(obs_cfg, t)
                if (with_margins and obs_cfg is not None) else 0.0)
    constraints = []
    values: dict = {}
    margin_max = 0.0
    phi = np.asarray(phi, dtype=float)
    for spec in barriers:
        h_val = float(spec.h(x, u))
        values[spec.label] = h_val
        gx = np.asarray(spec.grad_x(x, u), dtype=float)
        p = np.atleast_1d(np.asarray(spec.grad_u(x, u), dtype=float))
        deficit = -(float(gx @ drift) + float(p @ phi) + spec.gamma(h_val))
        margin = _channel_margin(gx, lx, envelope)
        margin_max = max(margin_max, margin)
        constraints.append(FilterConstraint(p, deficit + margin, spec.label))
    if chain is not None:
        levels = chain.levels
        vals = [float(levels[0].h(x, u))]
        prev_gx = None
        for i in range(1, chain.m + 1):
            prev = levels[i - 1]
            prev_gx = np.asarray(prev.grad_x(x, u), dtype=float)
            gu = np.atleast_1d(np.asarray(prev.grad_u(x, u), dtype=float))
            bdot = float(prev_gx @ drift) + float(gu @ phi)
            vals.append(bdot + chain.gammas[i - 1](vals[i - 1])
                        - _channel_margin(prev_gx, lx, envelope))
        for label, val in zip(chain.labels, vals):
            values[label] = val
        top = levels[chain.m]
        p = np.atleast_1d(np.asarray(top.grad_u(x, u), dtype=float))
        gx = np.asarray(top.grad_x(x, u), dtype=float)
        deficit = -(float(gx @ drift) + float(p @ phi)
                    + chain.gammas[chain.m - 1](vals[chain.m]))
        margin = _channel_margin(prev_gx, lx, envelope)
        margin_max = max(margin_max, margin)
        constraints.append(FilterConstraint(p, deficit + margin, top.label))
    return constraints, values, margin_max


def safe_rate(model: SystemModel,
              barriers: Sequence[BarrierSpec],
              chain: Optional[BarrierChain],
              phi: Array,
              obs_cfg: Optional[ObserverConfig],
              obs_state: Optional[ObserverState],
              x: Array, u: Array, t: float,
              d_hat: Optional[Array] = None,
              with_margins: bool = True) -> tuple:
    """Corrected input rate phi + v* plus a diagnostics dict.

    d_hat defaults to the observer's current estimate; callers implementing
    ablations may pass a zeroed estimate and with_margins=False. When every
    constraint is already slack the nominal rate is returned untouched.
    Infeasibility is reported in the diagnostics, not raised: it means the
    supplied barrier is not valid at this point and the caller decides how to
    stop.
    """
    phi = np.atleast_1d(np.asarray(phi, dtype=float))
    if d_hat is None:
        if obs_cfg is None or obs_state is None:
            d_hat = np.zeros(model.p)
        else:
            d_hat = disturbance_estimate(obs_cfg, obs_state, x)
    constraints, values, margin_max = build_constraints(
        model, barriers, chain, phi, x, u, d_hat, t, obs_cfg, with_margins)
    result = solve_multi(constraints)
    diagnostics = {
        "v_star": result.v_star,
        "d_hat": d_hat,
        "infeasible": result.infeasible,
        "active": result.active_labels,
        "barrier_values": values,
        "margin": margin_max,
        "slacks": {c.label: c.slack(result.v_star) for c in constraints},
        "constraints": constraints,
    }
    return phi + result.v_star, diagnostics
