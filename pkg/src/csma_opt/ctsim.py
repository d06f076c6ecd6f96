"""Event-driven simulation of idealized continuous-time CSMA.

The set of active links is a jump process on the schedule set: from schedule
``m`` every addable link ``l`` switches on at rate ``lambda_l`` (exponential
back-off, so two interfering links never start together) and every active link
switches off at rate ``1/mu`` (mean holding time ``mu``).  The jump chain is
simulated exactly, Gillespie style, by a compiled kernel.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np

from .graph import ScheduleSet, is_feasible


@numba.njit(cache=True)
def _advance(state, duration, lam, off_rate, add_link, add_target, rem_link, rem_target,
             rng, occupancy, max_events, rec_sched, rec_time):
    """Run the jump process for ``duration`` time units or ``max_events`` jumps.

    ``occupancy[i]`` accumulates time spent in schedule ``i``.  When
    ``rec_sched`` has room, the schedule entered at each jump and the jump time
    (relative to the call) are recorded.  Returns (state, elapsed, n_events).
    """
    L = add_link.shape[1]
    t = 0.0
    n = 0
    cap = rec_sched.shape[0]
    while n < max_events:
        total = 0.0
        for k in range(L):
            if add_link[state, k] < 0:
                break
            total += lam[add_link[state, k]]
        n_rem = 0
        for k in range(L):
            if rem_link[state, k] < 0:
                break
            n_rem += 1
        total += n_rem * off_rate
        if total <= 0.0:
            occupancy[state] += duration - t
            return state, duration, n
        # A fresh exponential clock on every call: pending clocks are discarded
        # at slot boundaries, which is exact because they are memoryless.
        dt = rng.exponential(1.0 / total)
        if t + dt >= duration:
            occupancy[state] += duration - t
            return state, duration, n
        occupancy[state] += dt
        t += dt
        u = rng.random() * total
        nxt = -1
        for k in range(L):
            l = add_link[state, k]
            if l < 0:
                break
            u -= lam[l]
            if u < 0.0:
                nxt = add_target[state, k]
                break
        if nxt < 0:
            # Deactivation; clamp the index against rounding in u.
            k = int(u / off_rate)
            if k >= n_rem:
                k = n_rem - 1
            if k < 0:
                k = 0
            nxt = rem_target[state, k]
        state = nxt
        if n < cap:
            rec_sched[n] = state
            rec_time[n] = t
        n += 1
    return state, t, n


_EMPTY_I = np.zeros(0, dtype=np.int64)
_EMPTY_F = np.zeros(0, dtype=np.float64)


@dataclass
class CtState:
    """Current activation profile (as an index into the schedule set) and clock."""

    schedule: int = 0
    clock: float = 0.0


class CtNetwork:
    """Precomputed jump structure of the CSMA chain on one schedule set."""

    def __init__(self, s: ScheduleSet):
        self.schedules = s
        self.graph = s.graph
        self.add_link, self.add_target, self.rem_link, self.rem_target = s.transitions()

    def advance(self, state: int, duration: float, lam, mu: float, rng,
                occupancy: np.ndarray | None = None, max_events: int = np.iinfo(np.int64).max,
                record: int = 0):
        lam = np.ascontiguousarray(lam, dtype=np.float64)
        if lam.shape != (self.graph.L,):
            raise ValueError(f"expected {self.graph.L} rates, got shape {lam.shape}")
        if np.any(lam < 0) or mu <= 0:
            raise ValueError("rates must be nonnegative and mu positive")
        if occupancy is None:
            occupancy = np.zeros(len(self.schedules))
        rec_s = np.empty(record, dtype=np.int64) if record else _EMPTY_I
        rec_t = np.empty(record, dtype=np.float64) if record else _EMPTY_F
        state, elapsed, n = _advance(
            int(state), float(duration), lam, 1.0 / mu, self.add_link, self.add_target,
            self.rem_link, self.rem_target, rng, occupancy, max_events, rec_s, rec_t,
        )
        return int(state), float(elapsed), int(n), occupancy, rec_s[: min(n, record)], rec_t[: min(n, record)]


@dataclass
class SlotResult:
    state: CtState
    S: np.ndarray
    occupancy: np.ndarray = field(repr=False)
    events: int = 0


def run_slot(state: CtState, net: CtNetwork, lam, mu: float, slot_len: float, rng) -> SlotResult:
    """Simulate one slot and report the fraction of it each link spent active."""
    if slot_len <= 0:
        raise ValueError("slot length must be positive")
    lam = np.asarray(lam, dtype=float)
    if np.any(lam <= 0):
        raise ValueError("activation rates lambda must be positive")
    s = net.schedules
    if not 0 <= state.schedule < len(s) or not is_feasible(s[state.schedule], net.graph):
        raise ValueError("initial schedule is not feasible")
    end, _, n, occ, _, _ = net.advance(state.schedule, slot_len, lam, mu, rng)
    S = np.clip((s.matrix.T @ occ) / slot_len, 0.0, 1.0)
    return SlotResult(CtState(end, 0.0), S, occ, n)


@dataclass
class CtTrace:
    """Schedule-holding intervals of a continuous-time run."""

    schedules: ScheduleSet
    index: np.ndarray
    duration: np.ndarray
    events: int

    @property
    def start_times(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum(self.duration)[:-1]])

    def write_csv(self, path) -> None:
        """Columns: time, schedule_index, then one activity bit per link."""
        L = self.schedules.L
        with open(Path(path), "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["time", "schedule_index"] + [f"a_{l}" for l in range(L)])
            for t, i in zip(self.start_times, self.index):
                w.writerow([repr(float(t)), int(i)] + [int(b) for b in self.schedules.matrix[i]])


def simulate(net: CtNetwork, lam, mu: float, rng, *, min_events: int = 0, horizon: float = 0.0,
             initial: int = 0, record: bool = False, chunk: int = 1_000_000):
    """Run the chain with fixed rates until both ``min_events`` jumps and
    ``horizon`` time have elapsed.

    Returns ``(occupancy, events, trace)``; ``trace`` is ``None`` unless
    ``record`` is set.
    """
    if min_events <= 0 and horizon <= 0:
        raise ValueError("need a positive event count or horizon")
    occ = np.zeros(len(net.schedules))
    state, t, events = initial, 0.0, 0
    idx_parts, time_parts = [np.array([initial])], [np.array([0.0])]
    while events < min_events or t < horizon:
        budget = max(min_events - events, 0) or chunk
        remaining = horizon - t if t < horizon else np.inf
        state, elapsed, n, occ, rs, rt = net.advance(
            state, remaining, lam, mu, rng, occupancy=occ,
            max_events=min(budget, chunk), record=min(budget, chunk) if record else 0,
        )
        if record:
            idx_parts.append(rs)
            time_parts.append(rt + t)
        t += elapsed
        events += n
        if n == 0 and not np.isfinite(elapsed):
            break
    trace = None
    if record:
        idx = np.concatenate(idx_parts)
        times = np.concatenate(time_parts + [[t]])
        trace = CtTrace(net.schedules, idx, np.diff(times), events)
    return occ, events, trace


def empirical_distribution(intervals, n_schedules: int | None = None) -> np.ndarray:
    """Time-weighted occupancy from ``(schedule_index, duration)`` pairs."""
    intervals = list(intervals)
    if not intervals:
        raise ValueError("empty trace")
    idx = np.array([int(i) for i, _ in intervals])
    dur = np.array([float(d) for _, d in intervals])
    if np.any(dur < 0):
        raise ValueError("negative holding interval")
    n = n_schedules if n_schedules is not None else idx.max() + 1
    occ = np.bincount(idx, weights=dur, minlength=n)
    total = occ.sum()
    if total <= 0:
        raise ValueError("trace covers zero time")
    return occ / total


def trace_distribution(trace: CtTrace) -> np.ndarray:
    return empirical_distribution(zip(trace.index, trace.duration), len(trace.schedules))
