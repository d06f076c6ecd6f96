"""Command-line entry point: ``csma-opt <mode> --config file.json [--a.b=value ...] --out dir``."""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__, ctsim, dtsim, exact, harness, ode, oracle
from .adaptive import run as run_adaptive
from .config import MODES, ConfigError, ExperimentConfig
from .graph import enumerate_schedules

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else None
    if isinstance(x, np.integer):
        return int(x)
    return x


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def _vector(x, L: int) -> np.ndarray:
    return np.full(L, float(x)) if np.isscalar(x) else np.asarray(x, dtype=float)


def _gap_bound(n_schedules: int, V: float) -> float:
    return math.log(n_schedules) / V


def _mode_enumerate(cfg: ExperimentConfig, out: Path) -> dict:
    s = enumerate_schedules(cfg.graph)
    return {"n_schedules": len(s), "schedules": [s.links(i) for i in range(len(s))]}


def _mode_stationary(cfg: ExperimentConfig, out: Path) -> dict:
    s = enumerate_schedules(cfg.graph)
    ct = cfg.raw["ct"]
    pi = exact.stationary_distribution(s, _vector(ct["lam"], s.L), ct["mu"])
    _write_csv(out / "stationary.csv", ["schedule_index", "links", "pi"],
               [[i, " ".join(map(str, s.links(i))), p] for i, p in enumerate(pi)])
    return {"pi": pi, "gamma": exact.link_throughputs(s, pi), "entropy": exact.entropy(pi)}


def _mode_simulate_ct(cfg: ExperimentConfig, out: Path) -> dict:
    s = enumerate_schedules(cfg.graph)
    ct = cfg.raw["ct"]
    lam, mu = _vector(ct["lam"], s.L), float(ct["mu"])
    target = exact.stationary_distribution(s, lam, mu)
    net = ctsim.CtNetwork(s)
    rows, per_seed = [], []
    for seed in cfg.seeds:
        occ, events, trace = ctsim.simulate(net, lam, mu, np.random.default_rng(seed),
                                            min_events=int(ct["min_events"]), horizon=float(ct["horizon"]),
                                            record=bool(ct["record"]))
        emp = occ / occ.sum()
        if trace is not None:
            trace.write_csv(out / f"ct_trace_seed{seed}.csv")
        rows += [[seed, i, emp[i], target[i]] for i in range(len(s))]
        per_seed.append({"seed": seed, "events": events, "tv_distance": exact.total_variation(emp, target),
                         "gamma": exact.link_throughputs(s, emp)})
    _write_csv(out / "occupancy.csv", ["seed", "schedule_index", "empirical", "exact"], rows)
    return {"exact_pi": target, "exact_gamma": exact.link_throughputs(s, target), "runs": per_seed}


def _mode_run_adaptive(cfg: ExperimentConfig, out: Path) -> dict:
    s = enumerate_schedules(cfg.graph)
    p = cfg.algo
    target = oracle.solve_entropy_regularized(s, p.U, p.V, tol=float(cfg.raw["solve"]["tol"]))
    runs = []
    for k, q0 in enumerate(cfg.q0_list()):
        for seed in cfg.seeds:
            trace = run_adaptive(cfg.graph, p, int(cfg.raw["adaptive"]["T"]), np.random.default_rng(seed), q0)
            trace.write_csv(out / f"trace_q0{k}_seed{seed}.csv")
            rep = harness.convergence_report(trace, target, tol=float(cfg.raw["tol"]))
            runs.append({"seed": seed, "q0": q0, **rep.to_dict()})
    return {"target_gamma": target.gamma, "target_nu": target.nu,
            "gap_bound": _gap_bound(len(s), p.V), "passed": all(r["passed"] for r in runs), "runs": runs}


def _mode_ode(cfg: ExperimentConfig, out: Path) -> dict:
    s = enumerate_schedules(cfg.graph)
    p, o = cfg.algo, cfg.raw["ode"]
    q0 = np.full(s.L, 0.5 * (p.q_min + p.q_max)) if o["q0"] is None else _vector(o["q0"], s.L)
    traj = ode.integrate(q0, s, p, float(o["horizon"]), float(o["dt"]))
    traj.write_csv(out / "ode.csv")
    target = oracle.solve_entropy_regularized(s, p.U, p.V, tol=float(cfg.raw["solve"]["tol"]))
    nu_end = p.W(traj.final)
    return {"q_final": traj.final, "W_q_final": nu_end, "nu_star": target.nu,
            "max_abs_diff": float(np.max(np.abs(nu_end - target.nu))),
            "gap_bound": _gap_bound(len(s), p.V)}


def _mode_solve(cfg: ExperimentConfig, out: Path) -> dict:
    s = enumerate_schedules(cfg.graph)
    p = cfg.algo
    reg = oracle.solve_entropy_regularized(s, p.U, p.V, tol=float(cfg.raw["solve"]["tol"]))
    opt = oracle.solve_utility_optimal(s, p.U)
    gap, bound = oracle.utility_gap_certificate(s, p.U, p.V, reg, opt)
    reg.write_json(out / "solution.json", bound)
    return {"regularized": reg.to_dict(bound), "utility_optimal": opt.to_dict(),
            "utility_gap": gap, "gap_bound": bound, "n_schedules": len(s)}


def _mode_run_dt(cfg: ExperimentConfig, out: Path) -> dict:
    s = enumerate_schedules(cfg.graph)
    dt = cfg.raw["dt"]
    gamma_opt = oracle.solve_utility_optimal(s, cfg.algo.U).gamma
    rows, reports = [], []
    for eps in cfg.epsilons():
        for seed in cfg.seeds:
            rng = np.random.default_rng(seed)
            if dt["lam"] is not None:
                p = dtsim.DtParams(eps, float(dt["mu"]), _vector(dt["lam"], s.L), dt["holding"])
                _, rep = dtsim.run_dt(cfg.graph, p, int(dt["horizon"]), rng, min_periods=int(dt["min_periods"]))
            else:
                _, rep = dtsim.run_dt_adaptive(cfg.graph, cfg.algo, eps, int(dt["T"]), rng,
                                               slot_len=dt["slot_len"], holding=dt["holding"],
                                               min_periods=int(dt["min_periods"]))
            rep.efficiency, rep.starved = dtsim.efficiency(rep.gamma_eps, gamma_opt, cfg.algo.U)
            rows += [[eps, seed, l, rep.gamma_eps[l], rep.E[l], rep.E_cycle_formula[l], int(rep.periods[l])]
                     for l in range(s.L)]
            reports.append({"seed": seed, **rep.to_dict()})
    _write_csv(out / "dt.csv", ["epsilon", "seed", "link", "gamma", "E", "E_cycle_formula", "periods"], rows)
    return {"gamma_opt": gamma_opt, "runs": reports}


def _mode_tradeoff(cfg: ExperimentConfig, out: Path) -> dict:
    dt = cfg.raw["dt"]
    kw = dict(slot_len=dt["slot_len"], holding=dt["holding"], workers=cfg.raw["workers"])
    if dt["q_max_list"] is not None:
        points = harness.fixed_product_sweep(cfg.graph, cfg.algo, dt["q_max_list"], float(dt["eps_lambda_max"]),
                                             cfg.seeds, int(dt["T"]), **kw)
    else:
        points = harness.tradeoff_sweep(cfg.graph, cfg.algo, cfg.epsilons(), cfg.seeds, int(dt["T"]), **kw)
    _write_csv(out / "tradeoff.csv", ["epsilon", "seed", "efficiency", "max_E", "beta", "collision_rate"],
               harness.tradeoff_rows(points))
    return {"points": [p.summary() for p in points], "monotone": harness.is_monotone_tradeoff(points),
            "all_ok": all(p.ok for p in points)}


DISPATCH = {
    "enumerate": _mode_enumerate,
    "stationary": _mode_stationary,
    "simulate-ct": _mode_simulate_ct,
    "run-adaptive": _mode_run_adaptive,
    "ode": _mode_ode,
    "solve": _mode_solve,
    "run-dt": _mode_run_dt,
    "tradeoff": _mode_tradeoff,
}


def run_experiment(cfg: ExperimentConfig, out) -> dict:
    """Run one mode, write its CSV/JSON files into ``out`` and return the summary."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    result = DISPATCH[cfg.mode](cfg, out)
    summary = _jsonable({"mode": cfg.mode, "version": __version__, "config": cfg.resolved(), "result": result})
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return summary


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="csma-opt", description=__doc__)
    ap.add_argument("mode", choices=MODES)
    ap.add_argument("--config", help="JSON experiment configuration")
    ap.add_argument("--out", default="out", help="output directory")
    args, overrides = ap.parse_known_args(argv)
    try:
        cfg = ExperimentConfig.load(args.config, overrides, mode=args.mode)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, json.JSONDecodeError) as exc:
        print(f"config error: cannot read {args.config}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        run_experiment(cfg, args.out)
    except Exception as exc:
        print(f"error in {cfg.mode}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"{cfg.mode}: wrote {Path(args.out) / 'summary.json'}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
