"""Discrete-time CSMA with collisions.

Time is cut into minislots of unit length.  A link may start transmitting in
minislot ``k`` only if it was idle in minislot ``k-1`` and so were all its
interfering neighbours; it then starts with probability ``eps * lambda_l``.
Sensing therefore lags by one minislot, and interfering links starting in the
same minislot collide: their transmissions occupy the channel for the whole
holding time but deliver nothing.  Holding times have mean ``mu / eps``.

Two engines implement the same model.  :func:`step_minislot` advances one
minislot at a time and is the readable reference; the compiled kernel behind
:func:`run_dt` jumps from event to event (a start or an end of transmission),
which is exact because per-minislot Bernoulli trials give geometric waiting
times.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numba
import numpy as np

from .adaptive import AlgoParams, SimTrace, log_lambda_from_queue, update_queue
from .graph import ConflictGraph

IDLE, SUCCESS, COLLIDED = 0, 1, 2
GEOMETRIC, DETERMINISTIC = "geometric", "deterministic"


@dataclass(frozen=True)
class DtParams:
    epsilon: float
    mu: float
    lam: np.ndarray
    holding: str = GEOMETRIC

    def __post_init__(self):
        lam = np.array(self.lam, dtype=float).reshape(-1)
        if not 0 < self.epsilon <= 1:
            raise ValueError("epsilon must lie in (0, 1]")
        if self.mu <= 0 or np.any(lam <= 0):
            raise ValueError("mu and lambda must be positive")
        if np.any(self.epsilon * lam > 1 + 1e-12):
            raise ValueError(f"transmit probability eps*lambda exceeds 1 (max {self.epsilon * lam.max():.4g})")
        if self.holding not in (GEOMETRIC, DETERMINISTIC):
            raise ValueError(f"unknown holding model {self.holding!r}")
        if self.mu / self.epsilon < 1:
            raise ValueError("mean holding time mu/eps must be at least one minislot")
        object.__setattr__(self, "lam", lam)

    @property
    def p_start(self) -> np.ndarray:
        return np.minimum(self.epsilon * self.lam, 1.0)

    @property
    def mean_holding(self) -> float:
        return self.mu / self.epsilon

    @property
    def deterministic_holding(self) -> int:
        return math.ceil(self.mu / self.epsilon - 1e-9)


@dataclass
class DtState:
    """Mode of each link during the last minislot and minislots left (including it)."""

    mode: np.ndarray
    remaining: np.ndarray

    @classmethod
    def idle(cls, L: int) -> "DtState":
        return cls(np.zeros(L, dtype=np.int64), np.zeros(L, dtype=np.int64))


def _draw_holding(p: DtParams, rng) -> int:
    if p.holding == DETERMINISTIC:
        return p.deterministic_holding
    return int(rng.geometric(1.0 / p.mean_holding))


def step_minislot(state: DtState, p: DtParams, g: ConflictGraph, rng) -> DtState:
    """Advance the channel by one minislot (per-minislot reference engine)."""
    mode, remaining = state.mode, state.remaining
    busy = mode != IDLE
    eligible = ~busy & ~(g.A & busy[None, :]).any(axis=1)
    starts = eligible & (rng.random(g.L) < p.p_start)
    new_mode = mode.copy()
    new_rem = remaining.copy()
    new_rem[busy] -= 1
    new_mode[busy & (new_rem == 0)] = IDLE
    for l in np.flatnonzero(starts):
        new_mode[l] = COLLIDED if (g.A[l] & starts).any() else SUCCESS
        new_rem[l] = _draw_holding(p, rng)
    return DtState(new_mode, new_rem)


@numba.njit(cache=True)
def _geometric(rng, p):
    """Number of Bernoulli(p) trials up to and including the first success."""
    if p >= 1.0:
        return 1
    if p <= 0.0:
        return np.iinfo(np.int64).max // 4
    u = 1.0 - rng.random()
    return 1 + int(math.floor(math.log(u) / math.log1p(-p)))


@numba.njit(cache=True)
def _advance(A, p_start, p_end, det_hold, rng, mode, end, clock, k_stop, rec_from,
             succ, last_succ_end, gap_sum, gap_cnt, counts, log, n_log):
    """Event-driven run of the channel up to minislot ``k_stop`` (exclusive).

    ``clock[0]`` is the first minislot not yet accounted for; the link modes
    hold from there until the next event.  ``clock[1]`` is the first minislot
    at which a start may happen under the current modes (one past the last
    event, since sensing lags by a minislot).  ``succ`` accumulates successful
    minislots per link.  Starts at or after ``rec_from`` are counted in
    ``counts`` (all, collided), and no-success gaps that began at or after
    ``rec_from`` are accumulated in ``gap_sum``/``gap_cnt``.  Transmissions
    are appended to ``log`` (link, start, end, collided) while it has room.
    """
    L = mode.shape[0]
    big = np.iinfo(np.int64).max // 2
    start_at = np.empty(L, dtype=np.int64)
    while True:
        cur = clock[0]
        ns = clock[1]
        k_end = big
        for l in range(L):
            if mode[l] != 0 and end[l] + 1 < k_end:
                k_end = end[l] + 1
        k_start = big
        for l in range(L):
            start_at[l] = big
            if mode[l] != 0:
                continue
            ok = True
            for j in range(L):
                if A[l, j] and mode[j] != 0:
                    ok = False
                    break
            if ok and p_start[l] > 0.0:
                start_at[l] = ns + _geometric(rng, p_start[l]) - 1
                if start_at[l] < k_start:
                    k_start = start_at[l]
        k = min(k_end, k_start)
        if k >= k_stop:
            for l in range(L):
                if mode[l] == 1:
                    succ[l] += k_stop - cur
            clock[0] = k_stop
            clock[1] = max(ns, k_stop)
            return n_log
        for l in range(L):
            if mode[l] == 1:
                succ[l] += k - cur
        # Ends take effect first; eligibility for starts at k was fixed by the
        # modes in minislot k - 1, which the loop above already used.
        for l in range(L):
            if mode[l] != 0 and end[l] + 1 == k:
                if mode[l] == 1:
                    last_succ_end[l] = k
                mode[l] = 0
        for l in range(L):
            if start_at[l] != k:
                continue
            collided = False
            for j in range(L):
                if A[l, j] and start_at[j] == k:
                    collided = True
                    break
            h = det_hold if det_hold > 0 else _geometric(rng, p_end)
            mode[l] = 2 if collided else 1
            end[l] = k + h - 1
            if k >= rec_from:
                counts[0] += 1
                if collided:
                    counts[1] += 1
            if not collided and last_succ_end[l] >= rec_from:
                gap_sum[l] += k - last_succ_end[l]
                gap_cnt[l] += 1
            if n_log < log.shape[0]:
                log[n_log, 0] = l
                log[n_log, 1] = k
                log[n_log, 2] = end[l]
                log[n_log, 3] = 1 if collided else 0
                n_log += 1
        clock[0] = k
        clock[1] = k + 1


class DtChannel:
    """Mutable channel state plus running statistics for the event engine."""

    def __init__(self, g: ConflictGraph, epsilon: float, mu: float, holding: str = GEOMETRIC,
                 log_capacity: int = 0):
        if holding not in (GEOMETRIC, DETERMINISTIC):
            raise ValueError(f"unknown holding model {holding!r}")
        if mu / epsilon < 1:
            raise ValueError("mean holding time mu/eps must be at least one minislot")
        self.g = g
        self.epsilon = epsilon
        self.mu = mu
        self.A = np.ascontiguousarray(g.A.astype(np.uint8))
        self.p_end = epsilon / mu
        self.det_hold = math.ceil(mu / epsilon - 1e-9) if holding == DETERMINISTIC else 0
        L = g.L
        self.mode = np.zeros(L, dtype=np.int64)
        self.end = np.zeros(L, dtype=np.int64)
        self.clock = np.zeros(2, dtype=np.int64)
        self.rec_from = np.iinfo(np.int64).max // 2
        self.last_succ_end = np.full(L, -1, dtype=np.int64)
        self.gap_sum = np.zeros(L, dtype=np.int64)
        self.gap_cnt = np.zeros(L, dtype=np.int64)
        self.counts = np.zeros(2, dtype=np.int64)
        self.log = np.zeros((log_capacity, 4), dtype=np.int64)
        self.n_log = 0

    @property
    def now(self) -> int:
        return int(self.clock[0])

    def start_recording(self) -> None:
        self.rec_from = self.now

    def advance(self, n: int, p_start, rng) -> np.ndarray:
        """Run ``n`` minislots; return successful minislots per link."""
        p_start = np.ascontiguousarray(p_start, dtype=np.float64)
        if np.any(p_start > 1 + 1e-12) or np.any(p_start < 0):
            raise ValueError("transmit probabilities must lie in [0, 1]")
        succ = np.zeros(self.g.L, dtype=np.int64)
        self.n_log = _advance(
            self.A, p_start, self.p_end, self.det_hold, rng, self.mode, self.end, self.clock,
            self.now + int(n), self.rec_from, succ, self.last_succ_end, self.gap_sum, self.gap_cnt,
            self.counts, self.log, self.n_log,
        )
        return succ

    @property
    def transmissions(self) -> np.ndarray:
        """Logged transmissions as rows (link, first minislot, last minislot, collided)."""
        return self.log[: self.n_log]


@dataclass
class FairnessReport:
    epsilon: float
    gamma_eps: np.ndarray
    E: np.ndarray
    periods: np.ndarray
    collision_rate: float
    window: int
    mean_holding: float
    under_sampled: bool = False
    efficiency: float | None = None
    starved: bool = False

    @property
    def beta(self) -> float:
        return 1.0 / float(np.max(self.E))

    @property
    def max_E(self) -> float:
        return float(np.max(self.E))

    @property
    def E_cycle_formula(self) -> np.ndarray:
        """(mu/eps) (1 - gamma) / gamma, the renewal prediction for E."""
        g = np.asarray(self.gamma_eps, dtype=float)
        with np.errstate(divide="ignore"):
            return self.mean_holding * (1.0 - g) / g

    def to_dict(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "gamma_eps": [float(x) for x in self.gamma_eps],
            "E": [float(x) for x in self.E],
            "E_cycle_formula": [float(x) for x in self.E_cycle_formula],
            "periods": [int(x) for x in self.periods],
            "beta": self.beta,
            "collision_rate": self.collision_rate,
            "efficiency": self.efficiency,
            "efficiency_metric": "exp(mean_l[U(gamma_l) - U(gamma_opt_l)]) for log utility",
            "under_sampled": self.under_sampled,
            "starved": self.starved,
            "window_minislots": self.window,
        }

    def write_json(self, path, **extra) -> None:
        Path(path).write_text(json.dumps({**self.to_dict(), **extra}, indent=2))


def _report(ch: DtChannel, succ_window: np.ndarray, window: int, min_periods: int) -> FairnessReport:
    cnt = ch.gap_cnt
    # A link that never completes a gap in the window is starved for (at least) all of it.
    E = np.where(cnt > 0, ch.gap_sum / np.maximum(cnt, 1), float(window))
    total, coll = ch.counts
    return FairnessReport(
        epsilon=ch.epsilon,
        gamma_eps=np.clip(succ_window / window, 0.0, 1.0),
        E=E.astype(float),
        periods=cnt.copy(),
        collision_rate=float(coll / total) if total else 0.0,
        window=window,
        mean_holding=ch.mu / ch.epsilon,
        under_sampled=bool(np.any(cnt < min_periods)),
    )


@dataclass
class DtTrace:
    transmissions: np.ndarray
    horizon: int


def run_dt(g: ConflictGraph, p: DtParams, horizon: int, rng, *, min_periods: int = 100,
           log_capacity: int = 0) -> tuple[DtTrace, FairnessReport]:
    """Fixed-rate run; statistics come from the second half of the horizon."""
    if p.lam.shape != (g.L,):
        raise ValueError(f"expected {g.L} rates, got {p.lam.size}")
    horizon = int(horizon)
    ch = DtChannel(g, p.epsilon, p.mu, p.holding, log_capacity)
    burn = horizon // 2
    ch.advance(burn, p.p_start, rng)
    ch.start_recording()
    succ = ch.advance(horizon - burn, p.p_start, rng)
    return DtTrace(ch.transmissions.copy(), horizon), _report(ch, succ, horizon - burn, min_periods)


def run_dt_adaptive(g: ConflictGraph, algo: AlgoParams, epsilon: float, T: int, rng, *,
                    slot_len: int | None = None, holding: str = GEOMETRIC, q0=None,
                    min_periods: int = 100) -> tuple[SimTrace, FairnessReport]:
    """The slotted queue adaptation driving the collision channel.

    Per-minislot start probabilities are ``eps * lambda_l[t]``; the slot lasts
    ``slot_len`` minislots (default: the continuous-time slot length scaled by
    ``1/eps``).  Fairness statistics cover the second half of the slots.
    """
    if epsilon * algo.lambda_max > 1 + 1e-12:
        raise ValueError(
            f"eps * lambda_max = {epsilon * algo.lambda_max:.4g} > 1: transmit probability cap violated"
        )
    slot_len = int(round(algo.slot_len / epsilon)) if slot_len is None else int(slot_len)
    if slot_len < 1:
        raise ValueError("slot must span at least one minislot")
    ch = DtChannel(g, epsilon, algo.mu, holding)
    q = np.full(g.L, algo.q_min) if q0 is None else np.array(q0, dtype=float)
    if q.shape != (g.L,) or np.any(q < algo.q_min) or np.any(q > algo.q_max):
        raise ValueError("initial queues must lie in [q_min, q_max]")
    qs = np.empty((T + 1, g.L))
    Ss = np.empty((T, g.L))
    qs[0] = q
    steps = algo.step(np.arange(T)) if T else np.empty(0)
    burn = T // 2
    succ_window = np.zeros(g.L)
    for t in range(T):
        if t == burn:
            ch.start_recording()
        p_start = np.minimum(epsilon * np.exp(log_lambda_from_queue(q, algo)), 1.0)
        succ = ch.advance(slot_len, p_start, rng)
        if t >= burn:
            succ_window += succ
        S = succ / slot_len
        q = update_queue(q, S, float(steps[t]), algo)
        qs[t + 1] = q
        Ss[t] = S
    window = (T - burn) * slot_len
    report = _report(ch, succ_window, max(window, 1), min_periods)
    return SimTrace(qs, Ss, algo, g), report


def efficiency(gamma, gamma_opt, U=None) -> tuple[float, bool]:
    """Geometric-mean throughput ratio exp(mean_l [log gamma_l - log gamma_opt_l]).

    Returns ``(efficiency, starved)``; a link with zero throughput gives
    efficiency 0 and ``starved = True``.  Only log utility is supported, which
    is the only family for which this ratio is defined.
    """
    from .functions import LogUtility

    if U is not None and not isinstance(U, LogUtility):
        raise NotImplementedError("efficiency metric is defined for log utility only")
    gamma = np.asarray(gamma, dtype=float)
    gamma_opt = np.asarray(gamma_opt, dtype=float)
    if np.any(gamma_opt <= 0):
        raise ValueError("optimal throughputs must be positive")
    if np.any(gamma <= 0):
        return 0.0, True
    return float(np.exp(np.mean(np.log(gamma) - np.log(gamma_opt)))), False
