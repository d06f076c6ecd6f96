import math

import cvxpy as cp
import numpy as np
import pytest
from scipy.optimize import brentq

from csma_opt import exact, oracle
from csma_opt.functions import AlphaFairUtility
from csma_opt.graph import ConflictGraph, enumerate_schedules


def _p_star():
    return brentq(lambda x: 1 / x - math.log(x / (1 - x)), 0.5, 0.99)


def _cvx_regularized(s, V, alpha=None):
    """Independent convex-programming oracle for the entropy-regularized problem."""
    M = s.matrix.astype(float)
    pi = cp.Variable(len(s))
    g = M.T @ pi
    u = cp.sum(cp.log(g)) if alpha is None else cp.sum(cp.power(g, 1 - alpha)) / (1 - alpha)
    cp.Problem(cp.Maximize(V * u + cp.sum(cp.entr(pi))), [pi >= 0, cp.sum(pi) == 1]).solve(solver="CLARABEL")
    return np.asarray(M.T @ pi.value), np.asarray(pi.value)


def test_single_link_root(log_u):
    s = enumerate_schedules(ConflictGraph.path(1))
    sol = oracle.solve_entropy_regularized(s, log_u, 1.0)
    assert sol.gamma[0] == pytest.approx(_p_star(), abs=1e-9)
    assert sol.pi[1] == pytest.approx(_p_star(), abs=1e-9)


def test_path_symmetric_and_matches_cvx(path3_set, log_u):
    sol = oracle.solve_entropy_regularized(path3_set, log_u, 1.0)
    assert sol.kkt_residual < 1e-8
    assert sol.gamma[0] == pytest.approx(sol.gamma[2], abs=1e-12)
    g_cvx, pi_cvx = _cvx_regularized(path3_set, 1.0)
    np.testing.assert_allclose(sol.gamma, g_cvx, atol=1e-5)
    np.testing.assert_allclose(sol.pi, pi_cvx, atol=1e-5)


@pytest.mark.parametrize("graph", [ConflictGraph.path(4), ConflictGraph.complete(3),
                                   ConflictGraph.from_edges(5, [(0, 1), (1, 2), (2, 3), (3, 4), (4, 0)])])
@pytest.mark.parametrize("V", [0.5, 3.0])
def test_matches_cvx_other_graphs(graph, V, log_u):
    s = enumerate_schedules(graph)
    sol = oracle.solve_entropy_regularized(s, log_u, V)
    g_cvx, _ = _cvx_regularized(s, V)
    # the conic solver itself is only accurate to ~1e-5 here
    np.testing.assert_allclose(sol.gamma, g_cvx, atol=5e-5)
    assert sol.kkt_residual < 1e-8


def test_alpha_fair_matches_cvx(path3_set):
    U = AlphaFairUtility(2.0)
    sol = oracle.solve_entropy_regularized(path3_set, U, 1.0)
    g_cvx, _ = _cvx_regularized(path3_set, 1.0, alpha=2.0)
    np.testing.assert_allclose(sol.gamma, g_cvx, atol=1e-5)


def test_regularized_approaches_optimum(path3_set, log_u):
    opt = oracle.solve_utility_optimal(path3_set, log_u)
    gaps = []
    for V in [1, 5, 10, 20]:
        sol = oracle.solve_entropy_regularized(path3_set, log_u, V)
        gaps.append(abs(np.sum(log_u(sol.gamma)) - opt.objective))
    assert all(b < a for a, b in zip(gaps, gaps[1:]))
    assert gaps[-1] < 0.1


def test_inadmissible_V(path3_set, log_u):
    with pytest.raises(ValueError):
        oracle.solve_entropy_regularized(path3_set, log_u, 11.0, bounds=(0.1, 10.0))
    with pytest.raises(ValueError):
        oracle.solve_entropy_regularized(path3_set, log_u, 0.0)


def test_nonconvergence_signalled(path3_set, log_u):
    with pytest.raises(oracle.ConvergenceError):
        oracle.solve_entropy_regularized(path3_set, log_u, 1.0, bounds=(0.1, 10.0), polish=False, max_iter=5)


def test_two_initializations_agree(path3_set, log_u):
    a = oracle.solve_entropy_regularized(path3_set, log_u, 1.0, bounds=(0.1, 10.0), nu0=[0.1, 0.1, 0.1])
    b = oracle.solve_entropy_regularized(path3_set, log_u, 1.0, bounds=(0.1, 10.0), nu0=[10.0, 10.0, 10.0])
    np.testing.assert_allclose(a.nu, b.nu, atol=1e-6)


def test_plain_subgradient_reaches_same_point(path3_set, log_u):
    ref = oracle.solve_entropy_regularized(path3_set, log_u, 1.0, bounds=(0.1, 10.0))
    sub = oracle.solve_entropy_regularized(path3_set, log_u, 1.0, bounds=(0.1, 10.0), polish=False, tol=1e-6)
    np.testing.assert_allclose(sub.nu, ref.nu, atol=1e-4)


def test_utility_optimal_examples(log_u):
    s = enumerate_schedules(ConflictGraph.path(3))
    sol = oracle.solve_utility_optimal(s, log_u)
    np.testing.assert_allclose(sol.gamma, [2 / 3, 1 / 3, 2 / 3], atol=1e-6)
    np.testing.assert_allclose(sol.pi[[2, 4]], [1 / 3, 2 / 3], atol=1e-6)
    assert sol.objective == pytest.approx(2 * math.log(2 / 3) + math.log(1 / 3), abs=1e-9)
    one = oracle.solve_utility_optimal(enumerate_schedules(ConflictGraph.path(1)), log_u)
    assert one.gamma[0] == pytest.approx(1.0, abs=1e-6)
    for L in (2, 3, 4):
        full = oracle.solve_utility_optimal(enumerate_schedules(ConflictGraph.complete(L)), log_u)
        np.testing.assert_allclose(full.gamma, 1 / L, atol=1e-6)


def test_utility_optimal_matches_cvx(log_u):
    s = enumerate_schedules(ConflictGraph.from_edges(5, [(0, 1), (1, 2), (2, 3), (3, 4), (0, 4), (1, 3)]))
    M = s.matrix.astype(float)
    pi = cp.Variable(len(s))
    prob = cp.Problem(cp.Maximize(cp.sum(cp.log(M.T @ pi))), [pi >= 0, cp.sum(pi) == 1])
    prob.solve(solver="CLARABEL")
    assert oracle.solve_utility_optimal(s, log_u).objective == pytest.approx(prob.value, abs=1e-6)


def test_project_simplex():
    v = np.array([0.2, -1.0, 3.0, 0.5])
    p = oracle.project_simplex(v)
    assert p.sum() == pytest.approx(1.0) and np.all(p >= 0)
    x = cp.Variable(4)
    cp.Problem(cp.Minimize(cp.sum_squares(x - v)), [x >= 0, cp.sum(x) == 1]).solve()
    np.testing.assert_allclose(p, x.value, atol=1e-6)


def test_gap_certificate_examples(log_u):
    s = enumerate_schedules(ConflictGraph.path(3))
    opt = oracle.solve_utility_optimal(s, log_u)
    for V, bound in [(1.0, math.log(5)), (10.0, math.log(5) / 10)]:
        reg = oracle.solve_entropy_regularized(s, log_u, V)
        gap, b = oracle.utility_gap_certificate(s, log_u, V, reg, opt)
        assert b == pytest.approx(bound) and gap <= b
    s1 = enumerate_schedules(ConflictGraph.path(1))
    gap, b = oracle.utility_gap_certificate(s1, log_u, 1.0, oracle.solve_entropy_regularized(s1, log_u, 1.0),
                                            oracle.solve_utility_optimal(s1, log_u))
    assert b == pytest.approx(math.log(2))
    assert gap == pytest.approx(-math.log(_p_star()), abs=1e-6)
    assert gap == pytest.approx(0.2456, abs=1e-3)


def test_kkt_residual_examples(path3_set, log_u):
    sol = oracle.solve_entropy_regularized(path3_set, log_u, 1.0)
    nu = sol.nu.copy()
    nu[0] += 0.1
    assert oracle.kkt_residual(path3_set, log_u, 1.0, sol.gamma, sol.pi, nu) >= 0.1 * min(1.0, sol.gamma.min())
    gamma = np.array([0.3, 0.5, 0.2])
    r = oracle.kkt_residual(path3_set, log_u, 2.0, gamma, np.full(5, 0.2), np.zeros(3))
    assert r == pytest.approx(np.max(2.0 / gamma))
    with pytest.raises(ValueError, match="degenerate"):
        oracle.kkt_residual(path3_set, log_u, 1.0, gamma, [0, 0.25, 0.25, 0.25, 0.25], np.ones(3))


def test_dual_value_properties(path3_set, log_u):
    s1 = enumerate_schedules(ConflictGraph.path(1))
    p = _p_star()
    primal = math.log(p) - p * math.log(p) - (1 - p) * math.log(1 - p)
    assert oracle.dual_value(s1, log_u, 1.0, [1 / p]) == pytest.approx(primal, abs=1e-12)
    # weak duality against random feasible primal points
    rng = np.random.default_rng(0)
    sol = oracle.solve_entropy_regularized(path3_set, log_u, 1.0)
    D = oracle.dual_value(path3_set, log_u, 1.0, sol.nu)
    assert D == pytest.approx(sol.objective, abs=1e-9)
    for _ in range(100):
        pi = rng.dirichlet(np.ones(5))
        gamma = exact.link_throughputs(path3_set, pi) * rng.uniform(0.2, 1.0, 3)
        assert oracle.regularized_objective(path3_set, log_u, 1.0, gamma, pi) <= D + 1e-12
        nu = rng.uniform(0.2, 10.0, 3)
        assert oracle.dual_value(path3_set, log_u, 1.0, nu) >= sol.objective - 1e-12
    with pytest.raises(ValueError):
        oracle.dual_value(path3_set, log_u, 1.0, [0.0, 1.0, 1.0], bounds=(0.1, 10.0))


def test_dual_log_partition_at_zero(path3_set):
    class Linear:  # U(x) = x, so the utility block vanishes when nu = 0 ... only the log-sum-exp is left
        def __call__(self, x):
            return np.asarray(x, dtype=float) * 0.0

        def deriv_inv(self, y):
            return np.zeros_like(np.asarray(y, dtype=float))

    assert oracle.dual_value(path3_set, Linear(), 1.0, np.zeros(3)) == pytest.approx(math.log(5))


def test_solution_json(tmp_path, path3_set, log_u):
    import json

    sol = oracle.solve_entropy_regularized(path3_set, log_u, 1.0)
    sol.write_json(tmp_path / "s.json", bound=math.log(5))
    d = json.loads((tmp_path / "s.json").read_text())
    assert set(d) == {"gamma", "pi", "nu", "objective", "kkt_residual", "bound"}
