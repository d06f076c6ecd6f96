"""Experiment orchestration: convergence checks and efficiency/fairness sweeps."""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import dtsim, oracle
from .adaptive import AlgoParams, SimTrace, running_average
from .graph import ConflictGraph, enumerate_schedules

WORKERS_ENV = "CSMA_OPT_WORKERS"


def default_workers() -> int:
    return max(1, int(os.environ.get(WORKERS_ENV, "1")))


class ParameterMismatch(ValueError):
    pass


@dataclass
class ConvergenceReport:
    slots: np.ndarray
    gamma_error: np.ndarray
    nu_error: np.ndarray
    tol: float
    passed: bool
    final_gamma: np.ndarray
    target_gamma: np.ndarray

    def to_dict(self) -> dict:
        return {
            "slots": self.slots.tolist(),
            "gamma_error": self.gamma_error.tolist(),
            "nu_error": self.nu_error.tolist(),
            "tol": self.tol,
            "passed": self.passed,
            "final_gamma": self.final_gamma.tolist(),
            "target_gamma": self.target_gamma.tolist(),
        }


def convergence_report(trace: SimTrace, target: oracle.OracleSolution, tol: float = 0.03,
                       points: int = 20) -> ConvergenceReport:
    """Distance of the running throughput average and of W(q[t]) to the
    regularized optimum, at log-spaced slots; pass/fail at the last slot."""
    p = trace.params
    if target.V is not None and not math.isclose(target.V, p.V, rel_tol=1e-12):
        raise ParameterMismatch(f"trace ran with V={p.V}, target was solved for V={target.V}")
    if target.nu is None:
        raise ParameterMismatch("target carries no multipliers; solve the regularized problem")
    if np.shape(target.gamma) != (trace.q.shape[1],):
        raise ParameterMismatch("target and trace disagree on the number of links")
    if target.bounds is not None:
        lo, hi = target.bounds
        if np.any(target.nu <= lo) or np.any(target.nu >= hi):
            raise ParameterMismatch("target multipliers sit on their bounds; widen them")
    lo, hi = p.nu_bounds
    if np.any(target.nu < lo) or np.any(target.nu > hi):
        raise ParameterMismatch(f"target multipliers leave the reachable range [W(q_min), W(q_max)] = [{lo}, {hi}]")
    if trace.T == 0:
        raise ValueError("empty trace")
    slots = np.unique(np.geomspace(1, trace.T, num=min(points, trace.T)).astype(int))
    gamma = running_average(trace.S)
    g_err = np.abs(gamma[slots - 1] - target.gamma).max(axis=1)
    n_err = np.abs(p.W(trace.q[slots]) - target.nu).max(axis=1)
    return ConvergenceReport(slots, g_err, n_err, tol, bool(g_err[-1] < tol), gamma[-1], target.gamma)


@dataclass
class TradeoffPoint:
    epsilon: float
    q_max: float
    eps_lambda_max: float
    seeds: list[int]
    efficiency: list[float]
    max_E: list[float]
    beta: list[float]
    collision_rate: list[float]
    status: list[str] = field(default_factory=list)

    def _agg(self, values) -> dict:
        v = np.asarray(values, dtype=float)
        v = v[np.isfinite(v)]
        if v.size == 0:
            return {"median": math.nan, "min": math.nan, "max": math.nan}
        return {"median": float(np.median(v)), "min": float(v.min()), "max": float(v.max())}

    @property
    def median_efficiency(self) -> float:
        return self._agg(self.efficiency)["median"]

    @property
    def median_max_E(self) -> float:
        return self._agg(self.max_E)["median"]

    @property
    def ok(self) -> bool:
        return all(s == "ok" for s in self.status)

    def summary(self) -> dict:
        return {
            "epsilon": self.epsilon, "q_max": self.q_max, "eps_lambda_max": self.eps_lambda_max,
            "n_seeds": len(self.seeds), "efficiency": self._agg(self.efficiency),
            "max_E": self._agg(self.max_E), "beta": self._agg(self.beta),
            "collision_rate": self._agg(self.collision_rate), "status": self.status,
        }


def _tradeoff_job(args):
    g, algo, eps, seed, T, slot_len, holding, gamma_opt = args
    try:
        _, rep = dtsim.run_dt_adaptive(g, algo, eps, T, np.random.default_rng(seed),
                                       slot_len=slot_len, holding=holding)
        eff, starved = dtsim.efficiency(rep.gamma_eps, gamma_opt, algo.U)
        status = "starved" if starved else "ok"
        return eps, seed, eff, rep.max_E, rep.beta, rep.collision_rate, status
    except Exception as exc:  # reported per point; the sweep carries on
        return eps, seed, math.nan, math.nan, math.nan, math.nan, f"error: {exc}"


def _run_points(g: ConflictGraph, points, seeds, T: int, slot_len, holding, workers) -> list[TradeoffPoint]:
    if not points:
        raise ValueError("empty sweep")
    if not seeds:
        raise ValueError("at least one seed is required")
    U = points[0][0].U
    gamma_opt = oracle.solve_utility_optimal(enumerate_schedules(g), U).gamma
    jobs = [(g, algo, eps, int(seed), int(T), slot_len, holding, gamma_opt)
            for algo, eps in points for seed in seeds]
    workers = default_workers() if workers is None else workers
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_tradeoff_job, jobs))
    else:
        results = [_tradeoff_job(j) for j in jobs]
    out = []
    for i, (algo, eps) in enumerate(points):
        rows = sorted(results[i * len(seeds):(i + 1) * len(seeds)], key=lambda r: r[1])
        out.append(TradeoffPoint(
            epsilon=eps, q_max=algo.q_max, eps_lambda_max=eps * algo.lambda_max,
            seeds=[r[1] for r in rows], efficiency=[r[2] for r in rows], max_E=[r[3] for r in rows],
            beta=[r[4] for r in rows], collision_rate=[r[5] for r in rows], status=[r[6] for r in rows],
        ))
    return sorted(out, key=lambda p: (p.epsilon, p.q_max))


def tradeoff_sweep(g: ConflictGraph, algo: AlgoParams, eps_list, seeds, T: int, *,
                   slot_len: int | None = None, holding: str = dtsim.GEOMETRIC,
                   workers: int | None = None) -> list[TradeoffPoint]:
    """Sweep epsilon with every algorithm parameter held fixed."""
    eps_list = list(eps_list)
    if not eps_list:
        raise ValueError("empty sweep")
    for eps in eps_list:
        if eps * algo.lambda_max > 1 + 1e-12:
            raise ValueError(f"epsilon={eps} violates the transmit probability cap")
    return _run_points(g, [(algo, float(e)) for e in eps_list], seeds, T, slot_len, holding, workers)


def fixed_product_sweep(g: ConflictGraph, algo: AlgoParams, q_max_list, eps_lambda_max: float, seeds,
                        T: int, *, slot_len: int | None = None, holding: str = dtsim.GEOMETRIC,
                        workers: int | None = None) -> list[TradeoffPoint]:
    """Sweep q_max (hence lambda_max) with eps * lambda_max held at a constant.

    Each point then has epsilon = eps_lambda_max / lambda_max, so the mean
    holding time mu/eps grows like exp(W(q_max)).
    """
    q_max_list = list(q_max_list)
    if not q_max_list:
        raise ValueError("empty sweep")
    if not 0 < eps_lambda_max <= 1:
        raise ValueError("eps * lambda_max must lie in (0, 1]")
    points = []
    for qm in q_max_list:
        a = AlgoParams(V=algo.V, q_min=algo.q_min, q_max=float(qm), mu=algo.mu, step=algo.step,
                       W=algo.W, U=algo.U, slot_len=algo.slot_len)
        points.append((a, eps_lambda_max / a.lambda_max))
    return _run_points(g, points, seeds, T, slot_len, holding, workers)


def tradeoff_rows(points: list[TradeoffPoint]) -> list[list]:
    """Rows of the frozen tradeoff CSV (epsilon, seed, efficiency, max_E, beta, collision_rate)."""
    rows = []
    for pt in points:
        for s, e, m, b, c in zip(pt.seeds, pt.efficiency, pt.max_E, pt.beta, pt.collision_rate):
            rows.append([pt.epsilon, s, e, m, b, c])
    return sorted(rows, key=lambda r: (r[0], r[1]))


def is_monotone_tradeoff(points: list[TradeoffPoint]) -> bool:
    """True when median efficiency never increases as median max E decreases."""
    pts = sorted(points, key=lambda p: p.median_max_E)
    eff = [p.median_efficiency for p in pts]
    return all(a <= b for a, b in zip(eff, eff[1:]))
