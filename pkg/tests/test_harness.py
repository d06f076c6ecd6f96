import json
import math

import numpy as np
import pytest

from csma_opt import __version__, adaptive, harness, oracle
from csma_opt.adaptive import AlgoParams
from csma_opt.cli import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, main, run_experiment
from csma_opt.config import ConfigError, ExperimentConfig, apply_overrides, parse_override
from csma_opt.functions import StepSchedule
from csma_opt.graph import ConflictGraph


def test_parse_override():
    assert parse_override("--algo.V=5") == (["algo", "V"], 5)
    assert parse_override("--dt.holding=deterministic") == (["dt", "holding"], "deterministic")
    assert parse_override("--seeds=[1,2]") == (["seeds"], [1, 2])
    with pytest.raises(ConfigError):
        parse_override("algo.V=5")


def test_overrides_nest_and_win():
    d = apply_overrides({"algo": {"V": 1, "q_max": 10}}, ["--algo.V=5", "--dt.epsilon=[0.1]"])
    assert d == {"algo": {"V": 5, "q_max": 10}, "dt": {"epsilon": [0.1]}}


def test_config_field_errors():
    with pytest.raises(ConfigError, match="^mode"):
        ExperimentConfig.from_dict({"mode": "fly"})
    with pytest.raises(ConfigError, match="^algo"):
        ExperimentConfig.from_dict({"mode": "solve", "algo": {"V": 50}})
    with pytest.raises(ConfigError, match="^graph"):
        ExperimentConfig.from_dict({"mode": "solve", "graph": {"links": 2, "conflicts": [[0, 5]]}})
    with pytest.raises(ConfigError, match="^seeds"):
        ExperimentConfig.from_dict({"mode": "run-dt", "seeds": []})
    with pytest.raises(ConfigError, match="^seeds"):
        ExperimentConfig.from_dict({"mode": "run-dt", "seeds": [-1]})
    with pytest.raises(ConfigError, match="empty sweep"):
        ExperimentConfig.from_dict({"mode": "tradeoff", "dt": {"epsilon": []}})
    with pytest.raises(ConfigError, match="^dt.epsilon"):
        ExperimentConfig.from_dict({"mode": "tradeoff", "dt": {"epsilon": [0.1]}})
    with pytest.raises(ConfigError, match="^ct.lam"):
        ExperimentConfig.from_dict({"mode": "stationary", "ct": {"lam": [1, 2]}})
    # deterministic modes do not need seeds
    ExperimentConfig.from_dict({"mode": "solve", "seeds": []})


def test_tradeoff_operating_point_is_default():
    cfg = ExperimentConfig.from_dict({"mode": "tradeoff"})
    assert cfg.algo.step == StepSchedule.constant(0.001)
    assert cfg.algo.V == 1.0 and cfg.algo.q_max == 10.0
    assert cfg.epsilons() == [pytest.approx(0.1 / math.exp(10.0))]


def test_config_file_and_resolved(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"graph": {"links": 2, "conflicts": [[0, 1]]}, "algo": {"V": 2}}))
    cfg = ExperimentConfig.load(path, ["--algo.q_max=8"], mode="solve")
    r = cfg.resolved()
    assert r["algo"]["V"] == 2.0 and r["algo"]["q_max"] == 8.0
    assert r["graph"] == {"links": 2, "conflicts": [[0, 1]]}


def test_enumerate_and_solve_outputs(tmp_path):
    s = run_experiment(ExperimentConfig.from_dict({"mode": "enumerate"}), tmp_path / "e")
    assert s["result"]["n_schedules"] == 5
    assert s["result"]["schedules"] == [[], [0], [1], [2], [0, 2]]
    s = run_experiment(ExperimentConfig.from_dict({"mode": "solve"}), tmp_path / "s")
    assert s["version"] == __version__
    assert s["result"]["gap_bound"] == pytest.approx(math.log(5))
    assert s["config"]["algo"]["V"] == 1.0
    sol = json.loads((tmp_path / "s" / "solution.json").read_text())
    assert sol["bound"] == pytest.approx(math.log(5))
    np.testing.assert_allclose(sol["gamma"][0], sol["gamma"][2])


def test_cli_exit_codes(tmp_path, capsys):
    assert main(["enumerate", "--out", str(tmp_path / "a")]) == EXIT_OK
    assert main(["solve", "--algo.V=50", "--out", str(tmp_path / "b")]) == EXIT_CONFIG
    assert main(["solve", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path / "b")]) == EXIT_CONFIG
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["solve", "--config", str(bad), "--out", str(tmp_path / "b")]) == EXIT_CONFIG
    # a graph beyond the enumeration cap fails at run time, not at validation
    big = tmp_path / "big.json"
    big.write_text(json.dumps({"graph": {"kind": "empty", "links": 25}}))
    assert main(["enumerate", "--config", str(big), "--out", str(tmp_path / "c")]) == EXIT_RUNTIME
    err = capsys.readouterr().err
    assert "graph too large" in err


@pytest.mark.parametrize("mode,overrides,csv_name", [
    ("simulate-ct", ["--ct.min_events=20000", "--ct.record=true"], "occupancy.csv"),
    ("run-adaptive", ["--adaptive.T=300"], "trace_q00_seed7.csv"),
    ("run-dt", ["--dt.T=200"], "dt.csv"),
    ("run-dt", ["--dt.lam=2", "--dt.epsilon=[0.1,0.2]", "--dt.horizon=100000"], "dt.csv"),
    ("tradeoff", ["--dt.T=150", "--dt.epsilon=[2e-6,4e-6]"], "tradeoff.csv"),
])
def test_stochastic_modes_are_byte_reproducible(tmp_path, mode, overrides, csv_name):
    args = [mode, "--seeds=[7,8]", *overrides]
    assert main([*args, "--out", str(tmp_path / "r1")]) == EXIT_OK
    assert main([*args, "--out", str(tmp_path / "r2")]) == EXIT_OK
    for f in sorted((tmp_path / "r1").glob("*.csv")):
        assert f.read_bytes() == (tmp_path / "r2" / f.name).read_bytes()
    assert (tmp_path / "r1" / csv_name).exists()
    assert json.loads((tmp_path / "r1" / "summary.json").read_text())["config"]["seeds"] == [7, 8]


def test_trace_and_tradeoff_csv_headers(tmp_path):
    main(["run-adaptive", "--adaptive.T=10", "--out", str(tmp_path / "a")])
    header = (tmp_path / "a" / "trace_q00_seed1.csv").read_text().splitlines()[0]
    assert header == "slot,q_0,q_1,q_2,S_0,S_1,S_2,gamma_0,gamma_1,gamma_2"
    main(["tradeoff", "--dt.T=50", "--out", str(tmp_path / "t")])
    header = (tmp_path / "t" / "tradeoff.csv").read_text().splitlines()[0]
    assert header == "epsilon,seed,efficiency,max_E,beta,collision_rate"


def test_ode_and_stationary_modes(tmp_path):
    s = run_experiment(ExperimentConfig.from_dict({"mode": "ode", "ode": {"horizon": 150.0}}), tmp_path / "o")
    assert s["result"]["max_abs_diff"] < 1e-4
    s = run_experiment(ExperimentConfig.from_dict({"mode": "stationary"}), tmp_path / "p")
    np.testing.assert_allclose(s["result"]["pi"], 0.2)


def test_convergence_report_and_mismatch(path3_set, log_u):
    p = AlgoParams(step=StepSchedule.constant(0.01))
    tr = adaptive.run(ConflictGraph.path(3), p, 2000, np.random.default_rng(0))
    target = oracle.solve_entropy_regularized(path3_set, log_u, 1.0)
    rep = harness.convergence_report(tr, target, tol=0.05)
    assert rep.slots[0] == 1 and rep.slots[-1] == 2000
    assert np.all(np.diff(rep.slots) > 0)
    assert rep.passed == (rep.gamma_error[-1] < 0.05)
    wrong_V = oracle.solve_entropy_regularized(path3_set, log_u, 2.0)
    with pytest.raises(harness.ParameterMismatch, match="V="):
        harness.convergence_report(tr, wrong_V)
    unreachable = oracle.solve_entropy_regularized(path3_set, log_u, 5.0)
    tr5 = adaptive.run(ConflictGraph.path(3), AlgoParams(V=5.0), 10, np.random.default_rng(0))
    with pytest.raises(harness.ParameterMismatch, match="reachable"):
        harness.convergence_report(tr5, unreachable)


def test_tradeoff_sweep_errors_and_order():
    g, algo = ConflictGraph.path(3), AlgoParams()
    with pytest.raises(ValueError, match="empty sweep"):
        harness.tradeoff_sweep(g, algo, [], [1], 10)
    with pytest.raises(ValueError, match="cap"):
        harness.tradeoff_sweep(g, algo, [0.1], [1], 10)
    eps = [4e-6, 2e-6]
    pts = harness.tradeoff_sweep(g, algo, eps, [5, 3], 60)
    assert [p.epsilon for p in pts] == sorted(eps)
    for p in pts:
        assert p.seeds == [3, 5] and len(p.efficiency) == 2 and p.ok
    rows = harness.tradeoff_rows(pts)
    assert [(r[0], r[1]) for r in rows] == sorted((r[0], r[1]) for r in rows)


def test_sweep_parallel_matches_serial():
    g, algo = ConflictGraph.path(3), AlgoParams()
    a = harness.tradeoff_sweep(g, algo, [2e-6, 4e-6], [1, 2], 60, workers=1)
    b = harness.tradeoff_sweep(g, algo, [2e-6, 4e-6], [1, 2], 60, workers=2)
    assert harness.tradeoff_rows(a) == harness.tradeoff_rows(b)


def test_failed_point_is_recorded_not_fatal():
    g, algo = ConflictGraph.path(3), AlgoParams()
    pts = harness.tradeoff_sweep(g, algo, [2e-6], [1], 20, slot_len=0)
    assert pts[0].status == ["error: slot must span at least one minislot"]
    assert math.isnan(pts[0].median_efficiency)


def test_fixed_product_sweep_sets_epsilon():
    pts = harness.fixed_product_sweep(ConflictGraph.path(3), AlgoParams(), [4.0, 5.0], 0.1, [1], 50)
    for p in pts:
        assert p.eps_lambda_max == pytest.approx(0.1)
        assert p.epsilon == pytest.approx(0.1 / math.exp(p.q_max))
    with pytest.raises(ValueError, match="empty sweep"):
        harness.fixed_product_sweep(ConflictGraph.path(3), AlgoParams(), [], 0.1, [1], 50)


def test_monotone_check():
    def pt(eff, E):
        return harness.TradeoffPoint(0.1, 10.0, 0.1, [1], [eff], [E], [1 / E], [0.0], ["ok"])

    assert harness.is_monotone_tradeoff([pt(0.9, 100.0), pt(0.8, 10.0), pt(0.7, 1.0)])
    assert not harness.is_monotone_tradeoff([pt(0.9, 100.0), pt(0.95, 10.0)])
