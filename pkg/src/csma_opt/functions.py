"""Utility families, weight functions and step-size schedules.

Each object is a small frozen dataclass so it can be named in a config file,
compared for equality, and serialized back into a summary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class LogUtility:
    """U(x) = log x (proportional fairness)."""

    def __call__(self, x):
        return np.log(x)

    def deriv(self, x):
        return 1.0 / np.asarray(x, dtype=float)

    def deriv2(self, x):
        return -1.0 / np.asarray(x, dtype=float) ** 2

    def deriv_inv(self, y):
        return 1.0 / np.asarray(y, dtype=float)

    def to_dict(self) -> dict:
        return {"kind": "log"}


@dataclass(frozen=True)
class AlphaFairUtility:
    """U(x) = x^(1-alpha) / (1-alpha) for alpha > 0, alpha != 1."""

    alpha: float

    def __post_init__(self):
        if self.alpha <= 0 or self.alpha == 1:
            raise ValueError("alpha-fair utility needs alpha > 0 and alpha != 1 (use log for 1)")

    def __call__(self, x):
        return np.asarray(x, dtype=float) ** (1 - self.alpha) / (1 - self.alpha)

    def deriv(self, x):
        return np.asarray(x, dtype=float) ** (-self.alpha)

    def deriv2(self, x):
        return -self.alpha * np.asarray(x, dtype=float) ** (-self.alpha - 1)

    def deriv_inv(self, y):
        return np.asarray(y, dtype=float) ** (-1.0 / self.alpha)

    def to_dict(self) -> dict:
        return {"kind": "alpha", "alpha": self.alpha}


def make_utility(spec) -> LogUtility | AlphaFairUtility:
    if isinstance(spec, (LogUtility, AlphaFairUtility)):
        return spec
    if isinstance(spec, str):
        spec = {"kind": spec}
    kind = spec.get("kind", "log")
    if kind == "log":
        return LogUtility()
    if kind == "alpha":
        alpha = float(spec["alpha"])
        return LogUtility() if alpha == 1 else AlphaFairUtility(alpha)
    raise ValueError(f"unknown utility kind {kind!r}")


@dataclass(frozen=True)
class LinearWeight:
    """W(x) = scale * x."""

    scale: float = 1.0

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError("weight function must be strictly increasing (scale > 0)")

    def __call__(self, x):
        return self.scale * np.asarray(x, dtype=float)

    def deriv(self, x):
        return np.full_like(np.asarray(x, dtype=float), self.scale)

    def inverse(self, y):
        return np.asarray(y, dtype=float) / self.scale

    def to_dict(self) -> dict:
        return {"kind": "linear", "scale": self.scale}


@dataclass(frozen=True)
class LogWeight:
    """W(x) = log(1 + x), a slowly growing alternative."""

    def __call__(self, x):
        return np.log1p(np.asarray(x, dtype=float))

    def deriv(self, x):
        return 1.0 / (1.0 + np.asarray(x, dtype=float))

    def inverse(self, y):
        return np.expm1(np.asarray(y, dtype=float))

    def to_dict(self) -> dict:
        return {"kind": "log1p"}


def make_weight(spec) -> LinearWeight | LogWeight:
    if isinstance(spec, (LinearWeight, LogWeight)):
        return spec
    if isinstance(spec, str):
        spec = {"kind": spec}
    kind = spec.get("kind", "linear")
    if kind == "linear":
        return LinearWeight(float(spec.get("scale", 1.0)))
    if kind == "log1p":
        return LogWeight()
    raise ValueError(f"unknown weight kind {kind!r}")


@dataclass(frozen=True)
class StepSchedule:
    """b[t] = b0 / (t0 + t)^power, or the constant b0 when ``power == 0``.

    Diminishing schedules are restricted to ``power`` in (1/2, 1] so that the
    steps sum to infinity while their squares stay summable.
    """

    b0: float = 0.001
    t0: float = 0.0
    power: float = 0.0

    def __post_init__(self):
        if self.b0 <= 0:
            raise ValueError("step size must be positive")
        if self.power != 0 and not (0.5 < self.power <= 1):
            raise ValueError("diminishing steps need power in (1/2, 1]")
        if self.power != 0 and self.t0 <= 0:
            raise ValueError("diminishing steps need t0 > 0")

    @classmethod
    def constant(cls, b0: float) -> "StepSchedule":
        return cls(b0=b0)

    @classmethod
    def harmonic(cls, b0: float = 1.0, t0: float = 100.0, power: float = 1.0) -> "StepSchedule":
        return cls(b0=b0, t0=t0, power=power)

    @property
    def diminishing(self) -> bool:
        return self.power != 0

    def __call__(self, t):
        if self.power == 0:
            return self.b0 * np.ones_like(np.asarray(t, dtype=float))[()]
        return self.b0 / (self.t0 + np.asarray(t, dtype=float)) ** self.power

    def cumulative(self, n: int) -> np.ndarray:
        """Breakpoints t_k = b[1] + ... + b[k] for k = 0..n (t_0 = 0)."""
        steps = self(np.arange(1, n + 1))
        return np.concatenate([[0.0], np.cumsum(steps)])

    def to_dict(self) -> dict:
        return {"b0": self.b0, "t0": self.t0, "power": self.power}


def make_step(spec) -> StepSchedule:
    if isinstance(spec, StepSchedule):
        return spec
    if isinstance(spec, (int, float)):
        return StepSchedule.constant(float(spec))
    return StepSchedule(
        b0=float(spec.get("b0", 0.001)),
        t0=float(spec.get("t0", 0.0)),
        power=float(spec.get("power", 0.0)),
    )


def log_lambda(q, W, mu: float):
    """log of the CSMA rate mu^-1 exp(W(q)), kept in log form to avoid overflow."""
    return W(q) - math.log(mu)
