"""Mean-field (averaged) dynamics of the virtual queues.

When the step sizes are small the queues barely move during a slot, so the
service a link receives averages out to its occupancy under the Gibbs law
``pi^q``.  The queues then follow the projected ODE

    dq_l/dt = (U'^-1(W(q_l)/V) - pi^q(l)) / W'(q_l),

in algorithmic time (the cumulative sum of step sizes).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exact import distribution_from_queues, link_throughputs
from .graph import ScheduleSet


def drift(q, s: ScheduleSet, p) -> np.ndarray:
    """Right-hand side of the queue ODE, with outward components zeroed on the box faces."""
    q = np.asarray(q, dtype=float)
    occ = link_throughputs(s, distribution_from_queues(s, q, p.W))
    return _project((p.target_service(q) - occ) / p.W.deriv(q), q, p)


def _project(f, q, p):
    outward = ((q <= p.q_min) & (f < 0)) | ((q >= p.q_max) & (f > 0))
    return np.where(outward, 0.0, f)


def _vector_field(s: ScheduleSet, p):
    # Same field as drift(), without per-call validation; integrate() calls it 4x per step.
    M = s.matrix.astype(float)
    Mt = np.ascontiguousarray(M.T)

    def field(q):
        e = M @ p.W(q)
        w = np.exp(e - e.max())
        occ = Mt @ w / w.sum()
        return _project((p.target_service(q) - occ) / p.W.deriv(q), q, p)

    return field


@dataclass
class OdeTrajectory:
    times: np.ndarray
    states: np.ndarray

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return np.stack([np.interp(t, self.times, self.states[:, l])
                         for l in range(self.states.shape[1])], axis=-1)

    def write_csv(self, path) -> None:
        L = self.states.shape[1]
        with open(Path(path), "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["time"] + [f"q_{l}" for l in range(L)])
            for t, row in zip(self.times, self.states):
                w.writerow([repr(float(t))] + [repr(float(x)) for x in row])


def integrate(q0, s: ScheduleSet, p, horizon: float, dt: float = 0.01, t0: float = 0.0) -> OdeTrajectory:
    """Classical RK4 with a fixed step, projecting onto the box after every step."""
    if dt <= 0 or horizon <= 0:
        raise ValueError("dt and horizon must be positive")
    n = int(np.ceil(horizon / dt - 1e-9))
    h = horizon / n
    q = np.clip(np.asarray(q0, dtype=float), p.q_min, p.q_max)
    states = np.empty((n + 1, q.size))
    states[0] = q
    f = _vector_field(s, p)
    lo, hi = p.q_min, p.q_max
    for i in range(n):
        k1 = f(q)
        k2 = f(np.clip(q + 0.5 * h * k1, lo, hi))
        k3 = f(np.clip(q + 0.5 * h * k2, lo, hi))
        k4 = f(np.clip(q + h * k3, lo, hi))
        q = np.clip(q + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4), lo, hi)
        states[i + 1] = q
    return OdeTrajectory(t0 + h * np.arange(n + 1), states)


@dataclass
class InterpolatedTrajectory:
    """Piecewise-linear path through ``values[n]`` at breakpoints ``times[n]``."""

    times: np.ndarray
    values: np.ndarray

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < self.times[0]) or np.any(t > self.times[-1]):
            raise ValueError("evaluation time outside the trajectory span")
        return np.stack([np.interp(t, self.times, self.values[:, l])
                         for l in range(self.values.shape[1])], axis=-1)

    @property
    def span(self) -> tuple[float, float]:
        return float(self.times[0]), float(self.times[-1])


def interpolate_stochastic(trace, p=None) -> InterpolatedTrajectory:
    """Place q[n] at t_n = b[1] + ... + b[n] and join the dots."""
    p = p if p is not None else trace.params
    q = np.asarray(trace.q, dtype=float)
    if q.shape[0] < 2:
        raise ValueError("empty trace")
    return InterpolatedTrajectory(p.step.cumulative(q.shape[0] - 1), q)


def tracking_error(stoch: InterpolatedTrajectory, s: ScheduleSet, p, window: float, start: float,
                   dt: float = 0.01) -> float:
    """sup over [start, start + window] of |q_bar(t) - q_tilde(t)|_inf, where
    q_tilde solves the ODE from q_tilde(start) = q_bar(start)."""
    lo, hi = stoch.span
    if window < 0 or start < lo or start + window > hi:
        raise ValueError(f"window [{start}, {start + window}] outside trajectory span [{lo}, {hi}]")
    if window == 0:
        return 0.0
    ode_path = integrate(stoch(start), s, p, window, dt=min(dt, window), t0=start)
    inside = (stoch.times > start) & (stoch.times < start + window)
    ts = np.concatenate([ode_path.times, stoch.times[inside]])
    return float(np.max(np.abs(stoch(np.clip(ts, lo, hi)) - ode_path(ts))))


def equilibrium(s: ScheduleSet, p, q0=None, horizon: float = 200.0, dt: float = 0.01) -> np.ndarray:
    q0 = np.full(s.L, 0.5 * (p.q_min + p.q_max)) if q0 is None else q0
    return integrate(q0, s, p, horizon, dt).final
