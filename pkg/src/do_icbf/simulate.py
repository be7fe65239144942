"""Fixed-step integration of the augmented closed loop, with trajectory logging.

The integrated stack is z = (x, u, r):

    xdot = F(x,u) + ell(x) d_true(t)
    udot = phi + v*          (frozen over each step; zero-order hold)
    rdot = -beta L_d(x) (F(x,u) + ell(x) d_hat)

The nominal rate phi and the correction v* are computed once per step from
the state at the step start; the plant and observer parts are integrated with
classical RK4 sampling the live state (and d_true) at the stage points. The
filter mode gates what the correction sees:

    off        v* = 0 (nominal law runs unprotected)
    icbf       v* computed with d_hat = 0 and margins zeroed (non-robust form)
    do_icbf    full estimate + margin
    high_order same as do_icbf (the constraint set is defined by the scenario)

The observer itself always runs, whatever the mode, so its estimate can be
logged and compared across modes.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .barriers import EPS_P as _EPS_P
from .barriers import BarrierChain, BarrierSpec, DomainBox
from .errors import BlowupError, ConfigurationError, ContractViolationError
from .filter import build_constraints, solve_multi
from .model import Array, AugmentedState, SystemModel
from .observer import ObserverConfig, disturbance_estimate, error_envelope

FILTER_MODES = ("off", "icbf", "do_icbf", "high_order")


@dataclass(frozen=True)
class SimConfig:
    """Integration settings for one closed-loop run."""

    dt: float = 1e-3
    t_end: float = 50.0
    log_stride: int = 1
    filter_mode: str = "do_icbf"

    def __post_init__(self):
        if self.dt <= 0.0:
            raise ConfigurationError(f"dt must be > 0, got {self.dt}")
        if self.t_end < self.dt:
            raise ConfigurationError(f"t_end must be >= dt, got {self.t_end}")
        if self.log_stride < 1:
            raise ConfigurationError(f"log_stride must be >= 1, got {self.log_stride}")
        if self.filter_mode not in FILTER_MODES:
            raise ConfigurationError(
                f"filter_mode must be one of {FILTER_MODES}, got {self.filter_mode!r}"
            )


@dataclass
class Scenario:
    """A complete benchmark: plant, nominal law, barriers, observer, start point."""

    name: str
    model: SystemModel
    law: object  # rate-law adapter with reset()/rate()
    obs_cfg: ObserverConfig
    initial: AugmentedState
    domain: DomainBox
    barriers: Sequence[BarrierSpec] = field(default_factory=tuple)
    chain: Optional[BarrierChain] = None
    designated_mode: str = "do_icbf"
    baseline_mode: str = "off"
    default_t_end: float = 50.0
    tracking_name: str = "final_state_norm"
    tracking_fn: Optional[Callable[["TrajectoryLog"], float]] = None
    check_box: Optional[DomainBox] = None
    check_resolution: object = 5
    # Opt-in scalar fast loop: requires m = p = 1, a constant disturbance
    # channel and observer gain, the default potential q = L_d x, and barrier
    # callables that accept plain sequences. The builders in scenarios.py
    # qualify; custom scenarios keep the generic path unless they opt in.
    fast_loop: bool = False

    def validate_initial(self) -> None:
        """The start point must lie in every protected set (filters only keep
        you inside a set you start in)."""
        x0, u0, r0 = self.initial.x, self.initial.u, self.initial.r
        from .observer import ObserverState
        d_hat0 = disturbance_estimate(self.obs_cfg, ObserverState(r0), x0)
        phi0 = np.zeros(self.model.m)
        _, values, _ = build_constraints(
            self.model, self.barriers, self.chain, phi0, x0, u0, d_hat0, 0.0,
            self.obs_cfg, with_margins=True)
        bad = {k: v for k, v in values.items() if v < 0.0}
        if bad:
            raise ConfigurationError(
                f"initial state is outside the safe set: {bad} (all barrier values must be >= 0)"
            )

    @property
    def value_labels(self) -> list:
        labels = list(self.chain.labels) if self.chain is not None else []
        labels += [b.label for b in self.barriers]
        return labels

    @property
    def constraint_labels(self) -> list:
        labels = [b.label for b in self.barriers]
        if self.chain is not None:
            labels.append(self.chain.levels[self.chain.m].label)
        return labels


class TrajectoryLog:
    """Time-indexed record of one run; column layout is fixed by the header."""

    def __init__(self, scenario: Scenario, cfg: SimConfig):
        n, m, p = scenario.model.n, scenario.model.m, scenario.model.p
        self.header = (
            ["t"]
            + [f"x{i}" for i in range(n)]
            + [f"u{i}" for i in range(m)]
            + [f"phi{i}" for i in range(m)]
            + [f"vstar{i}" for i in range(m)]
            + [f"d{i}" for i in range(p)]
            + [f"dhat{i}" for i in range(p)]
            + [f"b_{lab}" for lab in scenario.value_labels]
            + [f"slack_{lab}" for lab in scenario.constraint_labels]
            + ["c_margin", "infeasible"]
        )
        self._index = {name: i for i, name in enumerate(self.header)}
        self.rows: list = []
        self.halt_reason = "completed"
        self.scenario_name = scenario.name
        self.filter_mode = cfg.filter_mode
        self.dt = cfg.dt
        self.log_stride = cfg.log_stride
        self.value_labels = scenario.value_labels
        self.obs_cfg = scenario.obs_cfg
        self.left_domain = False

    def append(self, row: Sequence[float]) -> None:
        self.rows.append(tuple(row))

    def column(self, name: str) -> np.ndarray:
        i = self._index[name]
        return np.array([r[i] for r in self.rows])

    def as_array(self) -> np.ndarray:
        return np.asarray(self.rows, dtype=float)

    def write_csv(self, path) -> None:
        """UTF-8 CSV, floats at 17 significant digits, '\\n' line endings."""
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(",".join(self.header) + "\n")
            for row in self.rows:
                fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def rk4_step(rhs: Callable[[float, Array], Array], t: float, z: Array, dt: float) -> Array:
    """Classical 4-stage Runge-Kutta update; raises BlowupError on non-finite values."""
    if dt <= 0.0:
        raise ContractViolationError(f"dt must be > 0, got {dt}")
    k1 = rhs(t, z)
    k2 = rhs(t + 0.5 * dt, z + (0.5 * dt) * k1)
    k3 = rhs(t + 0.5 * dt, z + (0.5 * dt) * k2)
    k4 = rhs(t + dt, z + dt * k3)
    accum = k1 + 2.0 * k2 + 2.0 * k3 + k4
    z_next = z + (dt / 6.0) * accum
    if not (np.isfinite(accum).all() and np.isfinite(z_next).all()):
        raise BlowupError(t)
    return z_next


def run_closed_loop(scenario: Scenario, cfg: SimConfig,
                    force_generic: bool = False) -> TrajectoryLog:
    """Integrate the augmented loop and log every log_stride-th step.

    Halts early (with the reason recorded) on filter infeasibility or
    numerical blow-up. Identical scenario + config always produce an
    identical log: there is no randomness and no shared state between runs.
    Scenarios flagged fast_loop run through a scalar-specialized loop with
    the same formulas (force_generic=True routes around it, e.g. for
    equivalence tests).
    """
    if scenario.fast_loop and not force_generic:
        return _run_closed_loop_scalar(scenario, cfg)
    model = scenario.model
    n, m, p = model.n, model.m, model.p
    law = copy.deepcopy(scenario.law)
    law.reset(scenario.initial.x, scenario.initial.u)
    obs = scenario.obs_cfg
    beta = obs.beta
    q_fn = obs.q_fn
    gain_at = obs.gain_at
    F = model.F
    ell = model.ell
    d_true = model.d_true
    mode = cfg.filter_mode
    filter_on = mode != "off"
    robust = mode in ("do_icbf", "high_order")
    zero_d = np.zeros(p)
    dt = cfg.dt
    n_steps = int(round(cfg.t_end / dt))
    log = TrajectoryLog(scenario, cfg)
    z = scenario.initial.as_vector()
    box = scenario.domain
    lows = np.concatenate([box.x_low, box.u_low])
    highs = np.concatenate([box.x_high, box.u_high])
    value_labels = scenario.value_labels
    barriers = scenario.barriers
    chain = scenario.chain
    stride = cfg.log_stride

    # closure cell for the per-step frozen input rate; rebound every step
    u_rate_cell = np.zeros(m)
    v_star_zero = np.zeros(m)

    def rhs(tt: float, zz: Array) -> Array:
        xx = zz[:n]
        uu = zz[n:n + m]
        rr = zz[n + m:]
        fx = np.asarray(F(xx, uu), dtype=float)
        lx = ell(xx)
        d_hat = rr + beta * q_fn(xx)
        out = np.empty(n + m + p)
        out[:n] = fx + lx @ d_true(tt)
        out[n:n + m] = u_rate_cell
        out[n + m:] = -beta * (gain_at(xx) @ (fx + lx @ d_hat))
        return out

    for k in range(n_steps + 1):
        t = k * dt
        x = z[:n]
        u = z[n:n + m]
        r = z[n + m:]
        d_hat_obs = r + beta * q_fn(x)
        phi = np.asarray(law.rate(t, x, u, dt), dtype=float)
        constraints, values, margin = build_constraints(
            model, barriers, chain, phi, x, u,
            d_hat_obs if (robust or not filter_on) else zero_d, t, obs,
            with_margins=(robust or not filter_on))
        if filter_on:
            result = solve_multi(constraints)
            v_star = result.v_star
            infeasible = result.infeasible
        else:
            v_star = v_star_zero
            infeasible = False
        if not log.left_domain and (
                np.any(z[:n + m] < lows) or np.any(z[:n + m] > highs)):
            log.left_domain = True

        if k % stride == 0 or infeasible or k == n_steps:
            row = [t]
            row.extend(x)
            row.extend(u)
            row.extend(phi)
            row.extend(v_star)
            row.extend(d_true(t))
            row.extend(d_hat_obs)
            row.extend(values[lab] for lab in value_labels)
            row.extend(c.slack(v_star) for c in constraints)
            row.append(margin)
            row.append(1.0 if infeasible else 0.0)
            log.append(row)
        if infeasible:
            log.halt_reason = "infeasible"
            break
        if k == n_steps:
            break

        u_rate_cell = phi + v_star  # rebind; rhs reads the cell each stage

        try:
            z = rk4_step(rhs, t, z, dt)
        except BlowupError:
            log.halt_reason = "blowup"
            break
    return log


def _run_closed_loop_scalar(scenario: Scenario, cfg: SimConfig) -> TrajectoryLog:
    """Scalar-input specialization of run_closed_loop (same math, float ops).

    Preconditions (asserted): m = p = 1, constant channel column, constant
    observer gain row with the default potential q = L_d x. Everything else
    mirrors the generic loop step for step; tests pin the two paths together.
    """
    model = scenario.model
    n = model.n
    if model.m != 1 or model.p != 1:
        raise ConfigurationError("scalar fast loop needs m = p = 1")
    obs = scenario.obs_cfg
    if callable(obs.L_d) and not isinstance(obs.L_d, np.ndarray):
        raise ConfigurationError("scalar fast loop needs a constant observer gain")
    ell0 = np.asarray(model.ell(scenario.initial.x), dtype=float)
    ellc = tuple(float(v) for v in ell0[:, 0])
    gain = tuple(float(v) for v in np.atleast_2d(np.asarray(obs.L_d, dtype=float))[0])
    beta = obs.beta
    law = copy.deepcopy(scenario.law)
    law.reset(scenario.initial.x, scenario.initial.u)
    F = model.F
    d_true = model.d_true
    mode = cfg.filter_mode
    filter_on = mode != "off"
    robust = mode in ("do_icbf", "high_order")
    dt = cfg.dt
    n_steps = int(round(cfg.t_end / dt))
    stride = cfg.log_stride
    log = TrajectoryLog(scenario, cfg)
    box = scenario.domain
    lo = [float(v) for v in box.x_low] + [float(box.u_low[0])]
    hi = [float(v) for v in box.x_high] + [float(box.u_high[0])]

    plain = [(s.h, s.grad_x, s.grad_u, s.gamma.fn, s.label) for s in scenario.barriers]
    chain = scenario.chain
    if chain is not None:
        levels = [(s.h, s.grad_x, s.grad_u) for s in chain.levels]
        gammas = tuple(g.fn for g in chain.gammas)
        m_top = chain.m
        top_label = chain.levels[m_top].label
        chain_labels = chain.labels
    value_labels = scenario.value_labels

    z = [float(v) for v in scenario.initial.as_vector()]
    rng_n = range(n)
    idx_u = n
    idx_r = n + 1

    for k in range(n_steps + 1):
        t = k * dt
        x = z[:n]
        u = z[idx_u:idx_r]
        r = z[idx_r]
        q_val = 0.0
        for i in rng_n:
            q_val += gain[i] * x[i]
        d_hat_obs = r + beta * q_val
        d_hat = d_hat_obs if (robust or not filter_on) else 0.0
        phi = float(law.rate(t, x, u, dt)[0])
        envelope = (error_envelope(obs, t)
                    if (robust or not filter_on) else 0.0)

        fx = F(x, u)
        drift = [fx[i] + ellc[i] * d_hat for i in rng_n]
        cons = []  # (p, rhs, label)
        values = {}
        margin_max = 0.0
        for h_fn, gx_fn, gu_fn, gamma, label in plain:
            h_val = float(h_fn(x, u))
            values[label] = h_val
            gx = gx_fn(x, u)
            p_val = float(gu_fn(x, u)[0])
            dot = 0.0
            row = 0.0
            for i in rng_n:
                g = gx[i]
                dot += g * drift[i]
                row += g * ellc[i]
            margin = abs(row) * envelope
            margin_max = max(margin_max, margin)
            cons.append((p_val, -(dot + p_val * phi + gamma(h_val)) + margin, label))
        if chain is not None:
            h0, _, _ = levels[0]
            vals = [float(h0(x, u))]
            below_margin = 0.0
            for j in range(1, m_top + 1):
                _, gx_fn, gu_fn = levels[j - 1]
                gx = gx_fn(x, u)
                dot = 0.0
                row = 0.0
                for i in rng_n:
                    g = gx[i]
                    dot += g * drift[i]
                    row += g * ellc[i]
                below_margin = abs(row) * envelope
                bdot = dot + float(gu_fn(x, u)[0]) * phi
                vals.append(bdot + gammas[j - 1](vals[j - 1]) - below_margin)
            for label, val in zip(chain_labels, vals):
                values[label] = val
            _, gx_fn, gu_fn = levels[m_top]
            gx = gx_fn(x, u)
            p_val = float(gu_fn(x, u)[0])
            dot = 0.0
            for i in rng_n:
                dot += gx[i] * drift[i]
            margin_max = max(margin_max, below_margin)
            cons.append((p_val,
                         -(dot + p_val * phi + gammas[m_top - 1](vals[m_top]))
                         + below_margin,
                         top_label))

        infeasible = False
        v_star = 0.0
        if filter_on:
            best = None
            if all(rhs <= 0.0 for _, rhs, _ in cons):
                best = 0.0
            for p_val, rhs, _ in cons:
                if abs(p_val) <= _EPS_P:
                    if rhs > 0.0:
                        best = None
                        break
                    continue
                v = rhs / (p_val * p_val) * p_val
                if best is not None and abs(v) >= abs(best):
                    continue
                ok = True
                for pk, rk, _ in cons:
                    pv = pk * v
                    if pv - rk < -1e-9 * max(1.0, abs(rk), abs(pv)):
                        ok = False
                        break
                if ok:
                    best = v
            if best is None:
                infeasible = True
            else:
                v_star = best

        if not log.left_domain:
            for i in rng_n:
                if not lo[i] <= x[i] <= hi[i]:
                    log.left_domain = True
                    break
            else:
                if not lo[n] <= u[0] <= hi[n]:
                    log.left_domain = True

        if k % stride == 0 or infeasible or k == n_steps:
            row_out = [t]
            row_out.extend(x)
            row_out.append(u[0])
            row_out.append(phi)
            row_out.append(v_star)
            row_out.append(float(d_true(t)[0]))
            row_out.append(d_hat_obs)
            row_out.extend(values[lab] for lab in value_labels)
            row_out.extend(p_val * v_star - rhs for p_val, rhs, _ in cons)
            row_out.append(margin_max)
            row_out.append(1.0 if infeasible else 0.0)
            log.append(row_out)
        if infeasible:
            log.halt_reason = "infeasible"
            break
        if k == n_steps:
            break

        u_rate = phi + v_star

        def f_aug(tt, zz):
            xx = zz[:n]
            fx_s = F(xx, zz[idx_u:idx_r])
            dv = float(d_true(tt)[0])
            qv = 0.0
            for i in rng_n:
                qv += gain[i] * xx[i]
            dh = zz[idx_r] + beta * qv
            rdot = 0.0
            out = [0.0] * (n + 2)
            for i in rng_n:
                fi = fx_s[i]
                out[i] = fi + ellc[i] * dv
                rdot += gain[i] * (fi + ellc[i] * dh)
            out[idx_u] = u_rate
            out[idx_r] = -beta * rdot
            return out

        try:
            k1 = f_aug(t, z)
            hh = 0.5 * dt
            z2 = [z[i] + hh * k1[i] for i in range(n + 2)]
            k2 = f_aug(t + hh, z2)
            z3 = [z[i] + hh * k2[i] for i in range(n + 2)]
            k3 = f_aug(t + hh, z3)
            z4 = [z[i] + dt * k3[i] for i in range(n + 2)]
            k4 = f_aug(t + dt, z4)
            sixth = dt / 6.0
            z = [z[i] + sixth * (k1[i] + 2.0 * (k2[i] + k3[i]) + k4[i])
                 for i in range(n + 2)]
        except (OverflowError, ValueError):
            log.halt_reason = "blowup"
            break
        finite = True
        for v in z:
            if not math.isfinite(v):
                finite = False
                break
        if not finite:
            log.halt_reason = "blowup"
            break
    return log


def summarize(log: TrajectoryLog, scenario: Optional[Scenario] = None) -> dict:
    """Post-hoc metrics: per-barrier minima, tracking, envelope slack, effort."""
    if not log.rows:
        raise ContractViolationError("cannot summarize an empty log")
    arr = log.as_array()
    idx = {name: i for i, name in enumerate(log.header)}
    barrier_min = {lab: float(arr[:, idx[f"b_{lab}"]].min()) for lab in log.value_labels}

    p = len([h for h in log.header if h.startswith("d") and h[1:].isdigit()])
    d_cols = [idx[f"d{i}"] for i in range(p)]
    dhat_cols = [idx[f"dhat{i}"] for i in range(p)]
    err = np.linalg.norm(arr[:, dhat_cols] - arr[:, d_cols], axis=1)
    envelope = np.array([error_envelope(log.obs_cfg, t) for t in arr[:, idx["t"]]])
    envelope_violation = float((err - envelope).max())

    m = len([h for h in log.header if h.startswith("vstar")])
    v_cols = [idx[f"vstar{i}"] for i in range(m)]
    v_sq = (arr[:, v_cols] ** 2).sum(axis=1)
    effort = float(v_sq.sum() * log.dt * log.log_stride)

    metrics = {
        "barrier_min": barrier_min,
        "envelope_violation_max": envelope_violation,
        "correction_effort": effort,
        "halt_reason": log.halt_reason,
        "unsafe": bool(min(barrier_min.values()) < -1e-3) if barrier_min else False,
        "left_domain_box": log.left_domain,
        "steps_logged": len(log.rows),
        "t_final": float(arr[-1, idx["t"]]),
        "e_d0_true": float(err[0]),
        "e_d0_bound": float(log.obs_cfg.e_d0_bound),
    }
    if scenario is not None and scenario.tracking_fn is not None:
        metrics["tracking"] = {scenario.tracking_name: float(scenario.tracking_fn(log))}
    return metrics
