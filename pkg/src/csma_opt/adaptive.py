"""Slotted adaptation of CSMA rates through per-link virtual queues.

Each slot every link runs CSMA with rate ``lambda_l = exp(W(q_l)) / mu``, counts
the fraction of the slot it was active, and nudges its virtual queue towards
the service level its utility asks for.  Queues live in ``[q_min, q_max]``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import ctsim
from .functions import LinearWeight, LogUtility, StepSchedule, make_step, make_utility, make_weight
from .graph import ConflictGraph, ScheduleSet, enumerate_schedules


class InadmissibleParams(ValueError):
    pass


@dataclass(frozen=True)
class AlgoParams:
    V: float = 1.0
    q_min: float = 0.1
    q_max: float = 10.0
    mu: float = 1.0
    step: StepSchedule = field(default_factory=lambda: StepSchedule.constant(0.001))
    W: object = field(default_factory=LinearWeight)
    U: object = field(default_factory=LogUtility)
    slot_len: float | None = None  # defaults to 10 * mu

    def __post_init__(self):
        if self.V <= 0:
            raise InadmissibleParams("V must be positive")
        if self.mu <= 0:
            raise InadmissibleParams("mu must be positive")
        if not self.q_min < self.q_max:
            raise InadmissibleParams("need q_min < q_max")
        if self.slot_len is None:
            object.__setattr__(self, "slot_len", 10.0 * self.mu)
        if self.slot_len <= 0:
            raise InadmissibleParams("slot length must be positive")
        nu_max = float(self.W(self.q_max))
        if self.V > nu_max / float(self.U.deriv(1.0)):
            raise InadmissibleParams(
                f"V={self.V} exceeds W(q_max)/U'(1)={nu_max / float(self.U.deriv(1.0)):.6g}"
            )
        with np.errstate(divide="ignore", invalid="ignore"):
            target = self.U.deriv_inv(float(self.W(self.q_min)) / self.V)
        if not np.isfinite(target):
            raise InadmissibleParams("U'^-1(W(q_min)/V) is not finite; raise q_min")

    @property
    def nu_bounds(self) -> tuple[float, float]:
        return float(self.W(self.q_min)), float(self.W(self.q_max))

    @property
    def lambda_max(self) -> float:
        return math.exp(float(self.W(self.q_max))) / self.mu

    def target_service(self, q):
        """U'^-1(W(q)/V): the service rate at which the queue is stationary."""
        return self.U.deriv_inv(self.W(q) / self.V)

    def to_dict(self) -> dict:
        return {
            "V": self.V, "q_min": self.q_min, "q_max": self.q_max, "mu": self.mu,
            "slot_len": self.slot_len, "step": self.step.to_dict(),
            "W": self.W.to_dict(), "U": self.U.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AlgoParams":
        d = dict(d)
        kw = {k: float(d[k]) for k in ("V", "q_min", "q_max", "mu") if k in d}
        if d.get("slot_len") is not None:
            kw["slot_len"] = float(d["slot_len"])
        if "step" in d:
            kw["step"] = make_step(d["step"])
        if "W" in d:
            kw["W"] = make_weight(d["W"])
        if "U" in d:
            kw["U"] = make_utility(d["U"])
        return cls(**kw)


def update_queue(q, S, b_t: float, p: AlgoParams):
    """One projected virtual-queue step; works elementwise on arrays."""
    q = np.asarray(q, dtype=float)
    dW = p.W.deriv(q)
    if np.any(dW <= 0):
        raise ValueError("weight function derivative must be positive")
    q_new = q + (b_t / dW) * (p.target_service(q) - np.asarray(S, dtype=float))
    return np.clip(q_new, p.q_min, p.q_max)[()]


def lambda_from_queue(q, p: AlgoParams):
    return np.exp(p.W(q)) / p.mu


def log_lambda_from_queue(q, p: AlgoParams):
    return p.W(q) - math.log(p.mu)


@dataclass
class SimTrace:
    """Per-slot record of an adaptive run.

    ``q`` has ``T + 1`` rows (initial queue plus one per slot); ``S`` and
    ``gamma`` have ``T`` rows, with ``gamma[t]`` the running mean of
    ``S[0..t]``.
    """

    q: np.ndarray
    S: np.ndarray
    params: AlgoParams
    graph: ConflictGraph | None = None

    @property
    def T(self) -> int:
        return self.S.shape[0]

    @property
    def gamma(self) -> np.ndarray:
        return running_average(self.S)

    @property
    def final_gamma(self) -> np.ndarray:
        return gamma_running_average(self)

    def write_csv(self, path) -> None:
        """Columns: slot, q_l..., S_l..., gamma_l... (row t is the state after slot t)."""
        L = self.q.shape[1]
        gamma = self.gamma
        with open(Path(path), "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["slot"] + [f"q_{l}" for l in range(L)] + [f"S_{l}" for l in range(L)]
                       + [f"gamma_{l}" for l in range(L)])
            for t in range(self.T):
                w.writerow([t + 1] + [repr(float(x)) for x in self.q[t + 1]]
                           + [repr(float(x)) for x in self.S[t]]
                           + [repr(float(x)) for x in gamma[t]])


def running_average(S) -> np.ndarray:
    S = np.asarray(S, dtype=float)
    return np.cumsum(S, axis=0) / np.arange(1, S.shape[0] + 1).reshape((-1,) + (1,) * (S.ndim - 1))


def gamma_running_average(trace) -> np.ndarray:
    """gamma_l[t] = (1/t) * sum_{i<t} S_l[i] at the end of the trace."""
    S = trace.S if hasattr(trace, "S") else np.asarray(trace, dtype=float)
    if S.shape[0] == 0:
        raise ValueError("empty trace")
    return S.mean(axis=0)


def run(g: ConflictGraph, p: AlgoParams, T: int, rng, q0=None, *,
        schedules: ScheduleSet | None = None) -> SimTrace:
    """Algorithm loop over ``T`` slots on the continuous-time channel."""
    s = schedules if schedules is not None else enumerate_schedules(g)
    net = ctsim.CtNetwork(s)
    q = np.full(g.L, p.q_min) if q0 is None else np.array(q0, dtype=float)
    if q.shape != (g.L,) or np.any(q < p.q_min) or np.any(q > p.q_max):
        raise ValueError("initial queues must lie in [q_min, q_max]")
    qs = np.empty((T + 1, g.L))
    Ss = np.empty((T, g.L))
    qs[0] = q
    state = 0
    steps = p.step(np.arange(T)) if T else np.empty(0)
    M = s.matrix.T.astype(float)
    occ = np.zeros(len(s))
    for t in range(T):
        lam = np.exp(log_lambda_from_queue(q, p))
        occ[:] = 0.0
        state, _, _, occ, _, _ = net.advance(state, p.slot_len, lam, p.mu, rng, occupancy=occ)
        S = np.minimum(M @ occ / p.slot_len, 1.0)
        q = update_queue(q, S, float(steps[t]), p)
        qs[t + 1] = q
        Ss[t] = S
    return SimTrace(qs, Ss, p, g)
