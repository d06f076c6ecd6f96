"""Closed-form stationary laws of the collision-free CSMA chain.

All normalizations are done in log space: with ``lambda = exp(W(q)) / mu`` the
unnormalized weights overflow long before the distribution itself degenerates.
"""

from __future__ import annotations

import numpy as np

from .graph import ScheduleSet


def _normalize_log(log_w: np.ndarray) -> np.ndarray:
    p = np.exp(log_w - log_w.max())
    return p / p.sum()


def log_weights(s: ScheduleSet, link_log_weight) -> np.ndarray:
    """Per-schedule log weight: sum of ``link_log_weight[l]`` over active links."""
    w = np.asarray(link_log_weight, dtype=float)
    if w.shape != (s.L,):
        raise ValueError(f"expected {s.L} link weights, got shape {w.shape}")
    return s.matrix @ w


def stationary_distribution(s: ScheduleSet, lam=None, mu=1.0, *, log_lam=None) -> np.ndarray:
    """Stationary law pi(m) proportional to prod_{l in m} lambda_l * mu_l.

    ``mu`` may be a scalar or a per-link vector.  Pass ``log_lam`` instead of
    ``lam`` when the rates themselves would overflow.
    """
    mu = np.broadcast_to(np.asarray(mu, dtype=float), (s.L,))
    if np.any(mu <= 0) or not np.all(np.isfinite(mu)):
        raise ValueError("holding parameter mu must be positive")
    if (lam is None) == (log_lam is None):
        raise ValueError("pass exactly one of lam and log_lam")
    if log_lam is None:
        lam = np.asarray(lam, dtype=float)
        if lam.shape != (s.L,):
            raise ValueError(f"expected {s.L} rates, got shape {lam.shape}")
        if np.any(lam <= 0):
            raise ValueError("activation rates lambda must be positive")
        log_lam = np.log(lam)
    return _normalize_log(log_weights(s, np.asarray(log_lam, dtype=float) + np.log(mu)))


def distribution_from_queues(s: ScheduleSet, q, W) -> np.ndarray:
    """pi^q(m) proportional to exp(sum_{l in m} W(q_l))."""
    return _normalize_log(log_weights(s, W(np.asarray(q, dtype=float))))


def link_throughputs(s: ScheduleSet, pi) -> np.ndarray:
    """gamma_l = total probability of the schedules containing link l."""
    pi = np.asarray(pi, dtype=float)
    if pi.shape != (len(s),):
        raise ValueError(f"distribution has {pi.size} entries, schedule set has {len(s)}")
    return np.clip(s.matrix.T @ pi, 0.0, 1.0)


def check_distribution(pi, atol: float = 1e-12) -> None:
    pi = np.asarray(pi, dtype=float)
    if np.any(pi < 0) or abs(pi.sum() - 1.0) > atol:
        raise ValueError("not a probability vector")


def entropy(pi) -> float:
    pi = np.asarray(pi, dtype=float)
    nz = pi[pi > 0]
    return float(-(nz * np.log(nz)).sum())


def total_variation(p, q) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())
