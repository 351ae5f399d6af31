"""Hit indicator, its piecewise-linear smoothings and the decreasing schedules."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np


@dataclass(frozen=True)
class Schedules:
    """Step-length and smoothing-radius parameters.

    Steps follow ``alpha / (beta + k)`` and the radius ``a_r / (b_r + k**(1/3))``.
    ``alpha_u`` and ``alpha_mu`` may be zero, which freezes the iterates.
    """

    alpha_u: float = 0.05
    beta_u: float = 100.0
    alpha_mu: float = 5.0
    beta_mu: float = 100.0
    a_r: float = 0.1
    b_r: float = 1.0

    def __post_init__(self):
        for name in ("beta_u", "beta_mu", "a_r", "b_r"):
            if not getattr(self, name) > 0:
                raise ValueError(f"schedule parameter {name} must be positive")
        for name in ("alpha_u", "alpha_mu"):
            if getattr(self, name) < 0:
                raise ValueError(f"schedule parameter {name} must be nonnegative")

    def eps_u(self, k: int) -> float:
        return step_length(k, self.alpha_u, self.beta_u)

    def eps_mu(self, k: int) -> float:
        return step_length(k, self.alpha_mu, self.beta_mu)

    def radius(self, k: int) -> float:
        return smoothing_radius(k, self.a_r, self.b_r)

    def to_dict(self) -> dict:
        return asdict(self)


def indicator(y: float) -> float:
    """1 on an exact hit (``y == 0``), 0 otherwise."""
    if y < 0:
        raise ValueError("indicator is defined for nonnegative deviations")
    return 1.0 if y == 0 else 0.0


def indicator_smooth(y, r: float):
    """``max(0, 1 - y/r)``; works elementwise on arrays."""
    if r <= 0:
        raise ValueError("smoothing radius must be positive")
    out = np.maximum(0.0, 1.0 - np.asarray(y, dtype=float) / r)
    return float(out) if out.ndim == 0 else out


def heaviside_smooth(y, r: float):
    """One-sided ramp: 0 below ``-r``, linear on ``(-r, 0)``, 1 from 0 on."""
    if r <= 0:
        raise ValueError("smoothing radius must be positive")
    out = np.clip(1.0 + np.asarray(y, dtype=float) / r, 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


def step_length(k: int, alpha: float, beta: float) -> float:
    if k < 0:
        raise ValueError("iteration index must be nonnegative")
    return alpha / (beta + k)


def smoothing_radius(k: int, a: float, b: float) -> float:
    if k < 0:
        raise ValueError("iteration index must be nonnegative")
    return a / (b + k ** (1.0 / 3.0))
