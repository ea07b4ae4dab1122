"""Time evolution by a Lawson (integrating-factor) RK4 scheme with step-doubling control."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, List, Optional

import numpy as np

from . import _kernels
from .functionals import DiagnosticsRecord, diagnostics, workspace_for
from .model import FieldState, Model

VERDICTS = ("completed", "blowup_detected", "aborted_drift", "aborted_boundary", "aborted_nan")


class InvalidState(FloatingPointError):
    pass


@dataclass(frozen=True)
class IntegratorConfig:
    """Step control and verdict thresholds.

    ``blowup_ratio`` is the detector growth factor over its initial value
    that certifies blowup; ``blowup_threshold`` optionally adds an absolute
    level. ``drift_tol`` bounds the relative energy drift per unit time.
    """

    dt_init: float = 1e-3
    dt_min: float = 1e-9
    cfl_factor: float = 0.2
    drift_tol: float = 1e-4
    blowup_ratio: float = 1e6
    blowup_threshold: Optional[float] = None
    local_tol: float = 1e-10
    grow: float = 1.25
    boundary_tol: float = 1e-8
    max_steps: int = 10_000_000

    def __post_init__(self):
        for name in ("dt_init", "dt_min", "cfl_factor", "drift_tol", "blowup_ratio", "local_tol",
                     "boundary_tol"):
            if not getattr(self, name) > 0:
                raise ValueError("%s must be positive" % name)
        if not self.dt_min < self.dt_init:
            raise ValueError("dt_min must be smaller than dt_init")
        if not self.grow > 1:
            raise ValueError("grow factor must exceed 1")
        if self.blowup_threshold is not None and not self.blowup_threshold > 0:
            raise ValueError("blowup_threshold must be positive")

    def dt_cap(self, grid):
        return self.cfl_factor * grid.dx ** 2

    def as_dict(self):
        return asdict(self)


@dataclass
class RunOutcome:
    verdict: str
    t_end: float
    detector_value_at_end: float
    detector_initial: float
    state: FieldState = field(repr=False)
    reason: str = ""
    steps: int = 0
    rejected: int = 0

    def as_dict(self):
        return {"verdict": self.verdict, "t_end": self.t_end,
                "detector_value_at_end": self.detector_value_at_end,
                "detector_initial": self.detector_initial, "reason": self.reason,
                "steps": self.steps, "rejected": self.rejected}


class Integrator:
    """Right-hand side and single steps for one model on one workspace."""

    def __init__(self, model: Model, ws):
        self.model = model
        self.ws = ws
        self.grid = ws.grid
        self.b, self.alpha = model.nl.coeffs
        self.eps = model.nl.eps_floor
        self.has_W = not model.W.is_none
        self.linear_only = self.b == 0.0 and not self.has_W
        self._phase_cache = {}

    def nonlinear(self, u):
        """``-i[2u h'(|u|²) Δh(|u|²) + (W∗|u|²) u]``."""
        if self.linear_only:
            return np.zeros_like(u)
        rho, h, hp = _kernels.active.density_terms(u, self.b, self.alpha, self.eps)
        conv, lap_h = self.ws.nonlinear_fields(rho, h if self.b != 0.0 else None)
        zero = np.zeros(self.grid.shape)
        return _kernels.active.apply_potential(u, zero if conv is None else conv,
                                               zero if lap_h is None else lap_h, hp)

    def rhs(self, u):
        """Full ``du/dt = -i[Δu + 2u h'Δh + (W∗|u|²)u]``."""
        if not np.all(np.isfinite(u)):
            raise InvalidState("field contains non-finite values")
        return -1j * self.ws.laplacian(u) + self.nonlinear(u)

    def _phase(self, tau):
        ph = self._phase_cache.get(tau)
        if ph is None:
            if len(self._phase_cache) > 8:
                self._phase_cache.clear()
            ph = np.exp(1j * self.ws.k2 * tau)
            self._phase_cache[tau] = ph
        return ph

    def step(self, u, dt):
        """One Lawson RK4 step; the linear part ``e^{i|ξ|²dt}`` is exact."""
        if dt == 0:
            return u.copy()
        fft, ifft = self.ws.to_modes, self.ws.from_modes
        U = fft(u)
        E2 = self._phase(dt)
        if self.linear_only:
            return ifft(E2 * U)
        E = self._phase(0.5 * dt)
        k1 = fft(self.nonlinear(u))
        k2 = fft(self.nonlinear(ifft(E * (U + 0.5 * dt * k1))))
        k3 = fft(self.nonlinear(ifft(E * U + 0.5 * dt * k2)))
        k4 = fft(self.nonlinear(ifft(E2 * U + dt * (E * k3))))
        out = ifft(E2 * U + (dt / 6.0) * (E2 * k1 + 2.0 * E * (k2 + k3) + k4))
        if not np.all(np.isfinite(out)):
            raise InvalidState("non-finite values after step")
        return out

    def detector(self, u):
        """``∫|∇u|² + ∫|∇h(|u|²)|²``."""
        val = self.ws.grad_sq_integral(u)
        if self.b != 0.0:
            s = u.real ** 2 + u.imag ** 2
            val += self.ws.grad_sq_integral(self.ws.project(self.b * s ** self.alpha))
        return val


def rhs(state: FieldState, model: Model, ws=None):
    ws = ws or workspace_for(model, state.grid)
    return Integrator(model, ws).rhs(state.u)


def step(state: FieldState, model: Model, dt: float, ws=None, config: IntegratorConfig | None = None):
    """Advance ``state`` by ``dt`` (no step control)."""
    ws = ws or workspace_for(model, state.grid)
    cfg = config or IntegratorConfig()
    if dt < 0:
        raise ValueError("dt must be nonnegative")
    if dt > cfg.dt_cap(state.grid) * (1 + 1e-12):
        raise ValueError("dt=%g exceeds the cap %g = cfl_factor*dx^2" % (dt, cfg.dt_cap(state.grid)))
    return FieldState(state.grid, Integrator(model, ws).step(state.u, dt), state.t + dt)


def evolve(state0: FieldState, model: Model, config: IntegratorConfig, t_final: float,
           sample_every: float, callbacks: Iterable[Callable] = (), ws=None):
    """Integrate to ``t_final`` with adaptive steps, sampling diagnostics.

    Returns ``(RunOutcome, records)``. Each record carries the running
    pseudo-conformal residual. Callbacks receive ``(record, FieldState)`` at
    every sample.
    """
    if not sample_every > 0:
        raise ValueError("sample_every must be positive")
    grid = state0.grid
    ws = ws or workspace_for(model, grid)
    integ = Integrator(model, ws)
    callbacks = list(callbacks)
    cap = config.dt_cap(grid)
    bmask = grid.boundary_mask(0.1)

    u = state0.u.copy()
    t = float(state0.t)
    records: List[DiagnosticsRecord] = []
    p_acc = 0.0

    def sample(u, t, dt):
        nonlocal p_acc
        rec = diagnostics(u, t, model, ws, dt)
        if records:
            prev = records[-1]
            p_acc += 2.0 * (prev.t * prev.theta + rec.t * rec.theta) * (rec.t - prev.t)
            t0 = rec.t
            lhs = (rec.J + 4 * t0 * rec.y + 4 * t0 ** 2 * (rec.grad_u_sq + rec.grad_h_sq)
                   - 2 * t0 ** 2 * rec.hartree)
            rec.P_residual = lhs - (records[0].J + p_acc)
        records.append(rec)
        st = FieldState(grid, u, t)
        for cb in callbacks:
            cb(rec, st)
        return rec

    def finish(verdict, reason, u_last, t_last, det):
        return RunOutcome(verdict, t_last, det, det0, FieldState(grid, u_last, t_last), reason,
                          nsteps, nrej), records

    nsteps = nrej = 0
    if not np.all(np.isfinite(u)):
        det0 = math.nan
        return finish("aborted_nan", "initial field not finite", u, t, math.nan)
    rec0 = sample(u, t, 0.0)
    E0, M0 = rec0.energy, rec0.mass
    det0 = rec0.detector
    escale = max(abs(E0), 0.5 * det0, np.finfo(float).tiny)
    threshold = config.blowup_ratio * det0
    if config.blowup_threshold is not None:
        threshold = min(threshold, config.blowup_threshold)

    dt = min(config.dt_init, cap)
    t_start = t
    k_sample = 1

    def sample_time(k):
        # integer multiples avoid drift from accumulating sample_every
        ts = t_start + k * sample_every
        return t_final if ts > t_final - t_eps else ts

    t_eps = 1e-12 * max(1.0, t_final)
    next_sample = sample_time(k_sample)
    pinned_at = None
    det = det0

    while t < t_final - t_eps:
        if nsteps >= config.max_steps:
            return finish("aborted_drift", "step budget exhausted", u, t, det)
        target = min(next_sample, t_final)
        h = min(dt, cap, target - t)
        try:
            full = integ.step(u, h)
            mid = integ.step(u, 0.5 * h)
            fine = integ.step(mid, 0.5 * h)
        except InvalidState as exc:
            if h > config.dt_min:
                dt = max(0.5 * h, config.dt_min)
                nrej += 1
                continue
            return finish("aborted_nan", str(exc), u, t, det)
        m_new = ws.integrate(fine.real ** 2 + fine.imag ** 2)
        d = fine - full
        err = math.sqrt(max(ws.integrate(d.real ** 2 + d.imag ** 2), 0.0) / max(m_new, np.finfo(float).tiny)) / 15.0
        m_jump = abs(m_new - M0) / max(M0, np.finfo(float).tiny)
        m_bad = m_jump > config.drift_tol * max(t + h - state0.t, 1.0)
        bad = err > config.local_tol or m_bad
        pinned = h <= config.dt_min * (1 + 1e-12) and h < target - t
        if m_bad and pinned:
            return finish("aborted_drift", "relative mass drift %.3e at dt_min" % m_jump, u, t, det)
        if bad and not pinned:
            dt = max(0.5 * h, config.dt_min)
            nrej += 1
            continue
        u = fine
        t = t + h
        if abs(t - target) <= t_eps:
            t = target
        nsteps += 1
        det = integ.detector(u)
        if not math.isfinite(det):
            return finish("aborted_nan", "detector not finite", u, t, det)
        if bad and pinned:
            pinned_at = det if pinned_at is None else pinned_at
        elif not bad:
            pinned_at = None
            if err < config.local_tol / 3.0 and h >= dt:
                dt = min(dt * config.grow, cap)
        if det >= threshold:
            sample(u, t, h)
            return finish("blowup_detected", "detector reached %.3e (%.1fx initial)" % (det, det / det0),
                          u, t, det)
        if pinned_at is not None and det >= 4.0 * pinned_at:
            sample(u, t, h)
            return finish("blowup_detected", "dt pinned at dt_min while detector quadrupled", u, t, det)
        if t >= next_sample - t_eps or t >= t_final - t_eps:
            rec = sample(u, t, h)
            k_sample += 1
            next_sample = sample_time(k_sample)
            a = np.abs(u)
            ratio = float(a[bmask].max() / a.max())
            if math.isfinite(config.boundary_tol) and ratio > config.boundary_tol:
                return finish("aborted_boundary", "boundary ratio %.3e" % ratio, u, t, det)
            drift = abs(rec.energy - E0) / escale
            if drift > config.drift_tol * max(t - state0.t, 1.0):
                return finish("aborted_drift", "relative energy drift %.3e" % drift, u, t, det)
    return finish("completed", "", u, t, det)
