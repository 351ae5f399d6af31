"""Engine-failure model: shifted exponential onset and duration.

Both ``scale_p`` and ``scale_d`` are exponential *scales* (means), not rates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class FailureLaw:
    t_p_min: float = 0.68887
    scale_p: float = 15.1711
    t_d_min: float = 0.03444
    scale_d: float = 0.05350

    def __post_init__(self):
        for name in ("t_p_min", "scale_p", "t_d_min", "scale_d"):
            if not getattr(self, name) > 0:
                raise ValueError(f"failure law parameter {name} must be positive")


@dataclass(frozen=True)
class FailureScenario:
    t_p: float
    t_d: float

    @property
    def t_end(self) -> float:
        return self.t_p + self.t_d


def pi_f(law: FailureLaw, t_f: float) -> float:
    """Probability that no failure starts before ``t_f``."""
    if t_f < law.t_p_min:
        raise ValueError("t_f precedes the earliest possible failure")
    return math.exp(-(t_f - law.t_p_min) / law.scale_p)


def p_recoverable_bound(law: FailureLaw, t_cut: float, t_f: float) -> float:
    """Unconditional probability ``P(T_p < t_cut)``."""
    if not law.t_p_min <= t_cut <= t_f:
        raise ValueError(f"t_cut={t_cut} outside [{law.t_p_min}, {t_f}]")
    return -math.expm1(-(t_cut - law.t_p_min) / law.scale_p)


def truncated_onset_mean(law: FailureLaw, t_f: float) -> float:
    """Mean of ``T_p - t_p_min`` given ``T_p < t_f`` (closed form)."""
    width = t_f - law.t_p_min
    s = law.scale_p
    return s - width * math.exp(-width / s) / -math.expm1(-width / s)


def truncated_onset_cdf(t, law: FailureLaw, t_f: float):
    """CDF of the onset time conditioned on ``T_p < t_f``."""
    t = np.clip(np.asarray(t, dtype=float), law.t_p_min, t_f)
    return np.expm1(-(t - law.t_p_min) / law.scale_p) / math.expm1(-(t_f - law.t_p_min) / law.scale_p)


def sample_conditional(law: FailureLaw, t_f: float, rng: np.random.Generator) -> FailureScenario:
    """Draw one failure that starts during the mission.

    Exactly two uniforms are consumed per call (onset first, then duration),
    so a stream is reproducible for a fixed seed and call order.
    """
    u1, u2 = rng.random(2)
    mass = -math.expm1(-(t_f - law.t_p_min) / law.scale_p)
    t_p = law.t_p_min - law.scale_p * math.log1p(-u1 * mass)
    # guard the open upper end against rounding
    t_p = min(t_p, math.nextafter(t_f, -math.inf))
    t_d = law.t_d_min - law.scale_d * math.log1p(-u2)
    return FailureScenario(t_p=t_p, t_d=t_d)


def sample_many(law: FailureLaw, t_f: float, n: int, rng: np.random.Generator) -> list[FailureScenario]:
    return [sample_conditional(law, t_f, rng) for _ in range(n)]
