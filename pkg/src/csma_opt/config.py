"""Experiment configuration: a JSON file plus dotted command-line overrides."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path

from .adaptive import AlgoParams, InadmissibleParams
from .graph import ConflictGraph

MODES = ("enumerate", "stationary", "simulate-ct", "run-adaptive", "ode", "solve", "run-dt", "tradeoff")
STOCHASTIC_MODES = ("simulate-ct", "run-adaptive", "run-dt", "tradeoff")


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending JSON path."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


DEFAULTS: dict = {
    "graph": {"kind": "path", "links": 3},
    "algo": {},
    "ct": {"lam": 1.0, "mu": 1.0, "min_events": 1_000_000, "horizon": 0.0, "record": False},
    "adaptive": {"T": 200_000, "q0": ["q_min"]},
    "ode": {"horizon": 200.0, "dt": 0.01, "q0": None},
    "solve": {"tol": 1e-9},
    "dt": {
        "epsilon": None, "holding": "geometric", "horizon": 1_000_000, "lam": None, "mu": 1.0,
        "T": 20_000, "slot_len": None, "eps_lambda_max": 0.1, "q_max_list": None, "min_periods": 100,
    },
    "seeds": [1],
    "workers": None,
    "tol": 0.03,
}


def _merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def parse_override(arg: str) -> tuple[list[str], object]:
    """``--algo.V=5`` becomes ``(["algo", "V"], 5)``; values are read as JSON when possible."""
    if not arg.startswith("--") or "=" not in arg:
        raise ConfigError(arg, "overrides take the form --dotted.path=value")
    key, raw = arg[2:].split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.split("."), value


def apply_overrides(d: dict, overrides) -> dict:
    d = copy.deepcopy(d)
    for arg in overrides:
        path, value = parse_override(arg)
        node = d
        for part in path[:-1]:
            nxt = node.setdefault(part, {})
            if not isinstance(nxt, dict):
                raise ConfigError(".".join(path), f"{part!r} is not a section")
            node = nxt
        node[path[-1]] = value
    return d


def build_graph(spec) -> ConflictGraph:
    if isinstance(spec, str):
        return ConflictGraph.load(spec)
    kind = spec.get("kind")
    if kind is None:
        return ConflictGraph.from_dict(spec)
    n = int(spec["links"])
    if kind == "path":
        return ConflictGraph.path(n)
    if kind == "complete":
        return ConflictGraph.complete(n)
    if kind == "empty":
        return ConflictGraph.empty(n)
    if kind == "file":
        return ConflictGraph.load(spec["path"])
    raise ValueError(f"unknown graph kind {kind!r}")


@dataclass
class ExperimentConfig:
    mode: str
    raw: dict
    graph: ConflictGraph
    algo: AlgoParams
    seeds: list[int] = field(default_factory=list)

    @classmethod
    def from_dict(cls, d: dict, mode: str | None = None) -> "ExperimentConfig":
        raw = _merge(DEFAULTS, d)
        user_graph = d.get("graph")
        if isinstance(user_graph, str) or (isinstance(user_graph, dict) and "conflicts" in user_graph):
            raw["graph"] = copy.deepcopy(user_graph)  # an explicit edge list replaces the default topology
        if mode is not None:
            raw["mode"] = mode
        m = raw.get("mode")
        if m not in MODES:
            raise ConfigError("mode", f"expected one of {', '.join(MODES)}, got {m!r}")
        try:
            g = build_graph(raw["graph"])
        except (KeyError, ValueError, TypeError, OSError) as exc:
            raise ConfigError("graph", str(exc)) from exc
        try:
            algo = AlgoParams.from_dict(raw["algo"])
        except (InadmissibleParams, ValueError, TypeError, KeyError) as exc:
            raise ConfigError("algo", str(exc)) from exc
        seeds = raw["seeds"]
        if not isinstance(seeds, list) or not all(isinstance(s, int) and 0 <= s < 2**64 for s in seeds):
            raise ConfigError("seeds", "must be a list of 64-bit non-negative integers")
        if m in STOCHASTIC_MODES and not seeds:
            raise ConfigError("seeds", f"mode {m} needs at least one seed")
        cfg = cls(m, raw, g, algo, list(seeds))
        cfg._validate_mode()
        return cfg

    @classmethod
    def load(cls, path, overrides=(), mode: str | None = None) -> "ExperimentConfig":
        d = {} if path is None else json.loads(Path(path).read_text())
        return cls.from_dict(apply_overrides(d, overrides), mode)

    def _validate_mode(self) -> None:
        r = self.raw
        if self.mode in ("stationary", "simulate-ct"):
            lam = r["ct"]["lam"]
            if isinstance(lam, list) and len(lam) != self.graph.L:
                raise ConfigError("ct.lam", f"needs {self.graph.L} entries")
        if self.mode == "run-adaptive":
            if int(r["adaptive"]["T"]) < 1:
                raise ConfigError("adaptive.T", "must be positive")
            for i, q0 in enumerate(r["adaptive"]["q0"]):
                if isinstance(q0, list) and len(q0) != self.graph.L:
                    raise ConfigError(f"adaptive.q0[{i}]", f"needs {self.graph.L} entries")
                if not isinstance(q0, (list, int, float)) and q0 not in ("q_min", "q_max"):
                    raise ConfigError(f"adaptive.q0[{i}]", "use a vector, a scalar, 'q_min' or 'q_max'")
        if self.mode in ("run-dt", "tradeoff"):
            dt = r["dt"]
            if dt["holding"] not in ("geometric", "deterministic"):
                raise ConfigError("dt.holding", "must be 'geometric' or 'deterministic'")
            elam = dt["eps_lambda_max"]
            if elam is not None and not 0 < float(elam) <= 1:
                raise ConfigError("dt.eps_lambda_max", "must lie in (0, 1]")
        if self.mode == "run-dt" and r["dt"]["lam"] is not None:
            lam = r["dt"]["lam"]
            if isinstance(lam, list) and len(lam) != self.graph.L:
                raise ConfigError("dt.lam", f"needs {self.graph.L} entries")
            if r["dt"]["epsilon"] is None:
                raise ConfigError("dt.epsilon", "required for fixed-rate runs")
            lam_max = max(lam) if isinstance(lam, list) else float(lam)
            for e in self.epsilons():
                if not 0 < e <= 1 or e * lam_max > 1 + 1e-12:
                    raise ConfigError("dt.epsilon", f"{e} violates eps * lambda <= 1")
            return
        if self.mode == "tradeoff" and r["dt"]["q_max_list"] is not None:
            if not r["dt"]["q_max_list"]:
                raise ConfigError("dt.q_max_list", "empty sweep")
            if r["dt"]["eps_lambda_max"] is None:
                raise ConfigError("dt.eps_lambda_max", "required when sweeping q_max")
            return
        if self.mode in ("run-dt", "tradeoff"):
            eps = self.epsilons()
            if not eps:
                raise ConfigError("dt.epsilon", "empty sweep")
            for e in eps:
                if not 0 < e <= 1 or e * self.algo.lambda_max > 1 + 1e-12:
                    raise ConfigError("dt.epsilon", f"{e} violates eps * lambda_max <= 1 "
                                                    f"(lambda_max = {self.algo.lambda_max:.6g})")

    def epsilons(self) -> list[float]:
        """Sweep values; without an explicit list, epsilon = eps_lambda_max / lambda_max."""
        e = self.raw["dt"]["epsilon"]
        if e is None:
            elam = self.raw["dt"]["eps_lambda_max"]
            return [] if elam is None else [float(elam) / self.algo.lambda_max]
        return [float(x) for x in e] if isinstance(e, list) else [float(e)]

    def q0_list(self) -> list:
        out = []
        for q0 in self.raw["adaptive"]["q0"]:
            if q0 == "q_min":
                q0 = self.algo.q_min
            elif q0 == "q_max":
                q0 = self.algo.q_max
            out.append([float(q0)] * self.graph.L if isinstance(q0, (int, float)) else [float(x) for x in q0])
        return out

    def resolved(self) -> dict:
        """The fully resolved configuration, as embedded in every summary."""
        r = copy.deepcopy(self.raw)
        r["mode"] = self.mode
        r["graph"] = self.graph.to_dict()
        r["algo"] = self.algo.to_dict()
        return r
