"""Reference solvers for the scheduling utility problems.

Two problems over the schedule polytope are solved exactly at desk scale:

* utility maximization, max sum_l U(gamma_l) with gamma_l <= P(l active);
* its entropy-regularized version, max V sum_l U(gamma_l) + H(pi).

The regularized problem is solved through its dual in the link multipliers
``nu``: for fixed ``nu`` the optimal schedule law is a Gibbs distribution and
the optimal throughput is ``U'^-1(nu / V)``, so a projected subgradient
iteration on ``nu`` is all that is needed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .exact import distribution_from_queues, entropy, link_throughputs
from .functions import LinearWeight
from .graph import ScheduleSet


class ConvergenceError(RuntimeError):
    pass


@dataclass
class OracleSolution:
    gamma: np.ndarray
    pi: np.ndarray
    nu: np.ndarray | None
    objective: float
    kkt_residual: float
    iterations: int = 0
    bounds: tuple[float, float] | None = None
    V: float | None = None

    def to_dict(self, bound: float | None = None) -> dict:
        return {
            "gamma": self.gamma.tolist(),
            "pi": self.pi.tolist(),
            "nu": None if self.nu is None else self.nu.tolist(),
            "objective": self.objective,
            "kkt_residual": self.kkt_residual,
            "bound": bound,
        }

    def write_json(self, path, bound: float | None = None) -> None:
        Path(path).write_text(json.dumps(self.to_dict(bound), indent=2))


def _gibbs(s: ScheduleSet, nu) -> np.ndarray:
    return distribution_from_queues(s, nu, LinearWeight())


def regularized_objective(s: ScheduleSet, U, V: float, gamma, pi) -> float:
    return float(V * np.sum(U(gamma)) + entropy(pi))


def dual_value(s: ScheduleSet, U, V: float, nu, bounds: tuple[float, float] | None = None) -> float:
    """Dual function of the entropy-regularized problem at multipliers ``nu``.

    D(nu) = sum_l [V U(g_l) - nu_l g_l] + log sum_m exp(sum_{l in m} nu_l),
    with g_l = U'^-1(nu_l / V).
    """
    nu = np.asarray(nu, dtype=float)
    if bounds is not None:
        lo, hi = bounds
        if np.any(nu < lo - 1e-12) or np.any(nu > hi + 1e-12):
            raise ValueError("multipliers outside their bounds")
    g = U.deriv_inv(nu / V)
    return float(np.sum(V * U(g) - nu * g) + logsumexp(s.matrix @ nu))


def kkt_residual(s: ScheduleSet, U, V: float, gamma, pi, nu) -> float:
    """Largest violation among stationarity in gamma, stationarity in pi (with
    the normalization multiplier set to zero the mean), and complementary
    slackness."""
    gamma, pi, nu = (np.asarray(x, dtype=float) for x in (gamma, pi, nu))
    if np.any(pi <= 0):
        raise ValueError("degenerate schedule distribution: log pi undefined")
    r_gamma = np.abs(V * U.deriv(gamma) - nu)
    r = -1.0 - np.log(pi) + s.matrix @ nu
    eta = -r.mean()
    r_pi = np.abs(r + eta)
    r_slack = np.abs(nu * (gamma - link_throughputs(s, pi)))
    return float(max(r_gamma.max(), r_pi.max(), r_slack.max()))


def default_bounds(U, V: float, s: ScheduleSet) -> tuple[float, float]:
    """Starting multiplier box for an unconstrained solve.

    gamma_l <= 1 at the optimum, so nu_l = V U'(gamma_l) >= V U'(1): half of
    that is a safe floor.  The ceiling is a guess that the solver widens when
    it binds.
    """
    return 0.5 * V * float(U.deriv(1.0)), 2.0 * V * float(U.deriv(1.0 / len(s)))


def _dual_direction(M, U, V, nu):
    e = M @ nu
    pi = np.exp(e - e.max())
    pi /= pi.sum()
    g = U.deriv_inv(nu / V)
    return g - M.T @ pi, g, pi


def _blocked(nu, d, lo, hi):
    return ((nu <= lo) & (d < 0)) | ((nu >= hi) & (d > 0))


def solve_entropy_regularized(s: ScheduleSet, U, V: float, bounds: tuple[float, float] | None = None,
                              tol: float = 1e-9, nu0=None, a0: float = 1.0,
                              max_iter: int = 1_000_000, polish: bool = True,
                              switch_tol: float = 1e-3, switch_iter: int = 2000) -> OracleSolution:
    """Projected subgradient descent on the dual with steps a0 / sqrt(k).

    The subgradient of the dual in ``nu_l`` is ``U'^-1(nu_l/V) - pi_nu(l)``.
    The dual is smooth and strictly convex, so with ``polish`` the subgradient
    phase stops after ``switch_iter`` iterations (or once the subgradient is
    below ``switch_tol``) and damped Newton steps on the free coordinates
    finish the job to ``tol``.  Plain subgradient steps alone get there too,
    but can take ~10^6 iterations on ill-conditioned instances (large V).

    Without explicit ``bounds`` the box starts at :func:`default_bounds` and is
    doubled upwards until the solution no longer touches its ceiling.
    """
    if V <= 0:
        raise ValueError("V must be positive")
    if bounds is None:
        lo, hi = default_bounds(U, V, s)
        while True:
            sol = solve_entropy_regularized(s, U, V, (lo, hi), tol, nu0, a0, max_iter, polish,
                                             switch_tol, switch_iter)
            if np.all(sol.nu < hi):
                return sol
            nu0, hi = sol.nu, 2.0 * hi
    lo, hi = map(float, bounds)
    if not lo < hi:
        raise ValueError("need nu_min < nu_max")
    if V > hi / float(U.deriv(1.0)):
        raise ValueError(f"inadmissible V={V}: exceeds nu_max/U'(1)={hi / float(U.deriv(1.0)):.6g}")
    M = s.matrix.astype(float)
    nu = np.clip(np.full(s.L, V * float(U.deriv(0.5))) if nu0 is None else np.array(nu0, dtype=float),
                 lo, hi)
    stop = max(tol, switch_tol) if polish else tol
    n_iter = min(max_iter, switch_iter) if polish else max_iter
    for k in range(1, n_iter + 1):
        d, _, _ = _dual_direction(M, U, V, nu)
        # Moves clipped by the box count as converged in the blocked direction.
        d[_blocked(nu, d, lo, hi)] = 0.0
        if np.max(np.abs(d)) < stop:
            break
        nu = np.clip(nu + (a0 / math.sqrt(k)) * d, lo, hi)
    else:
        if not polish:
            raise ConvergenceError(f"dual iteration did not reach tol={stop} in {max_iter} steps")
    if polish:
        nu, k = _newton_polish(s, M, U, V, nu, lo, hi, tol, k)
    pi = _gibbs(s, nu)
    gamma = U.deriv_inv(nu / V)
    return OracleSolution(
        gamma=np.asarray(gamma, dtype=float), pi=pi, nu=nu,
        objective=regularized_objective(s, U, V, gamma, pi),
        kkt_residual=kkt_residual(s, U, V, gamma, pi, nu),
        iterations=k, bounds=(lo, hi), V=V,
    )


def _newton_polish(s, M, U, V, nu, lo, hi, tol, k, max_newton: int = 200):
    extra = 0
    for _ in range(max_newton):
        d, g, pi = _dual_direction(M, U, V, nu)
        free = ~_blocked(nu, d, lo, hi)
        if np.max(np.abs(d[free]), initial=0.0) < tol:
            # One more step past the threshold costs nothing and buys digits.
            extra += 1
            if extra > 1 or not free.any():
                break
        occ = M.T @ pi
        H = (M.T * pi) @ M - np.outer(occ, occ) - np.diag(1.0 / (V * U.deriv2(g)))
        Hf = H[np.ix_(free, free)]
        step = np.zeros_like(nu)
        step[free] = np.linalg.solve(Hf, d[free])
        f0 = dual_value(s, U, V, nu)
        t = 1.0
        while t > 1e-12:
            cand = np.clip(nu + t * step, lo, hi)
            if dual_value(s, U, V, cand) <= f0 + 1e-14 * abs(f0):
                break
            t *= 0.5
        nu = cand
        k += 1
    else:
        raise ConvergenceError("Newton polish did not converge")
    return nu, k


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sort-based)."""
    n = v.size
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    rho = np.nonzero(u - css / np.arange(1, n + 1) > 0)[0][-1]
    theta = css[rho] / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


def solve_utility_optimal(s: ScheduleSet, U, tol: float = 1e-10, max_iter: int = 200_000,
                          pi0=None) -> OracleSolution:
    """Maximize sum_l U(gamma_l) over schedule distributions.

    Projected gradient ascent on the simplex with Armijo backtracking; stops
    when the projected-gradient step moves pi by less than ``tol``.
    """
    M = s.matrix.astype(float)
    n = len(s)
    pi = np.full(n, 1.0 / n) if pi0 is None else project_simplex(np.asarray(pi0, dtype=float))

    def value(p):
        g = M.T @ p
        if np.any(g <= 0):
            return -np.inf
        return float(np.sum(U(g)))

    f = value(pi)
    step = 1.0
    for k in range(max_iter):
        grad = M @ U.deriv(M.T @ pi)
        while True:
            cand = project_simplex(pi + step * grad)
            fc = value(cand)
            diff = cand - pi
            if fc >= f + 1e-4 * grad @ diff or step < 1e-16:
                break
            step *= 0.5
        moved = np.max(np.abs(diff))
        pi, f = cand, fc
        if moved < tol:
            break
        step *= 2.0
    else:
        raise ConvergenceError(f"projected gradient did not reach tol={tol} in {max_iter} steps")
    gamma = M.T @ pi
    return OracleSolution(gamma=gamma, pi=pi, nu=None, objective=f, kkt_residual=_opt_residual(s, U, pi),
                          iterations=k + 1)


def _opt_residual(s: ScheduleSet, U, pi) -> float:
    """Simplex KKT violation: every schedule's marginal value may not exceed the
    value of the schedules carrying mass."""
    M = s.matrix.astype(float)
    grad = M @ U.deriv(M.T @ pi)
    top = grad[pi > 1e-9].min()
    return float(max(grad.max() - top, 0.0) + (grad[pi > 1e-9].max() - top))


def utility_gap_certificate(s: ScheduleSet, U, V: float, sol_reg: OracleSolution,
                            sol_opt: OracleSolution, tol: float = 1e-9) -> tuple[float, float]:
    """Return (|U(gamma_bar) - U(gamma_star)|, log|N| / V) and check the bound."""
    gap = abs(float(np.sum(U(sol_opt.gamma))) - float(np.sum(U(sol_reg.gamma))))
    bound = math.log(len(s)) / V
    if gap > bound + tol:
        raise AssertionError(f"utility gap {gap:.6g} exceeds log|N|/V = {bound:.6g}")
    return gap, bound


def queues_from_multipliers(nu, W):
    return W.inverse(nu)
