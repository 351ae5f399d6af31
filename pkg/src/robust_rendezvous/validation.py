"""A-posteriori checks: Monte Carlo success probability, analytic bounds and
the ratio-to-constraint transformation lemma on a toy problem."""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from robust_rendezvous.det_solver import AugLagParams, SolveStatus, solve_recourse
from robust_rendezvous.dynamics import MissionSpec
from robust_rendezvous.failures import p_recoverable_bound, pi_f, sample_conditional
from robust_rendezvous.propagation import ControlTrajectory, integrate


@dataclass
class SampleOutcome:
    index: int
    t_p: float
    t_d: float
    status: str
    consumption: float


@dataclass
class ProbabilityEstimate:
    """Monte Carlo estimate of the success probability of a nominal control.

    ``mean_recourse_consumption`` averages the mission fuel over hit samples;
    it is an extra diagnostic and plays no part in ``p_hat``.
    """

    p_hat: float
    stderr: float
    pi_f: float
    n_samples: int
    n_hits: int
    n_diverged: int
    mean_recourse_consumption: float
    samples: list[SampleOutcome] = field(repr=False, default_factory=list)

    @property
    def hit_fraction(self) -> float:
        return self.n_hits / self.n_samples

    def write_csv(self, path: Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("index", "t_p", "t_d", "status", "recourse_consumption"))
            for s in self.samples:
                w.writerow([s.index, f"{s.t_p:.9g}", f"{s.t_d:.9g}", s.status, f"{s.consumption:.9g}"])


def _evaluate(args) -> tuple[str, float]:
    x_tp, scen, spec, params, u, ups, recourse = args
    sol = recourse(x_tp, scen, spec, params, v0=u, upsilon0=ups)
    return sol.status.value, sol.consumption


def estimate_probability(u: ControlTrajectory, spec: MissionSpec, params: AugLagParams = AugLagParams(),
                         n_samples: int = 2000, seed: int = 0, upsilon0=None, workers: int = 1,
                         recourse: Callable = solve_recourse) -> ProbabilityEstimate:
    """Estimate ``P(hit) = pi_f + (1 - pi_f) * P(recourse hits | failure)``.

    Scenarios are drawn up front from one seeded stream, so the hit set does
    not depend on evaluation order or on ``workers``.  ``recourse`` can be
    replaced (for instance by a stub) as long as it mimics
    :func:`solve_recourse`.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    rng = np.random.Generator(np.random.PCG64(seed))
    scens = [sample_conditional(spec.failure_law, spec.t_f, rng) for _ in range(n_samples)]
    grid = u.grid
    xs = integrate(spec.x_i, u.values, grid, spec)
    jobs = [(xs[grid.snap(s.t_p)].copy(), s, spec, params, u, upsilon0, recourse) for s in scens]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_evaluate, jobs, chunksize=max(1, n_samples // (8 * workers))))
    else:
        results = [_evaluate(j) for j in jobs]
    samples = [SampleOutcome(i, s.t_p, s.t_d, st, c) for i, (s, (st, c)) in enumerate(zip(scens, results))]
    hits = [s for s in samples if s.status == SolveStatus.HIT.value]
    n_div = sum(s.status == SolveStatus.DIVERGED.value for s in samples)
    pf = pi_f(spec.failure_law, spec.t_f)
    q = len(hits) / n_samples
    return ProbabilityEstimate(
        p_hat=pf + (1.0 - pf) * q,
        stderr=(1.0 - pf) * math.sqrt(q * (1.0 - q) / n_samples),
        pi_f=pf,
        n_samples=n_samples,
        n_hits=len(hits),
        n_diverged=n_div,
        mean_recourse_consumption=float(np.mean([s.consumption for s in hits])) if hits else float("nan"),
        samples=samples,
    )


def p_det_analytic(spec: MissionSpec, t_b: float) -> float:
    """``pi_f + P(T_p < t_b)``: success if every failure before ``t_b`` is recoverable."""
    law = spec.failure_law
    return pi_f(law, spec.t_f) + p_recoverable_bound(law, t_b, spec.t_f)


def check_lemma_condition(J_val: float, Theta_val: float, mu_star: float) -> bool:
    """True when ``mu_star >= J / Theta``, the sufficient condition for the
    ratio and plain formulations to share KKT points."""
    if not Theta_val > 0:
        raise ValueError("Theta must be positive")
    return bool(mu_star >= J_val / Theta_val)


@dataclass
class ToyReport:
    applicable: bool
    argmin_ratio: np.ndarray
    argmin_plain: np.ndarray
    same_argmin: bool
    mu_star: float
    lambda_star: float
    relation_residual: float
    condition_holds: bool


def lemma_b1_toy_equivalence(active: bool = True, n_grid: int = 2001, p: float = 0.8) -> ToyReport:
    """Compare ``min J/Theta`` and ``min J`` under ``Theta >= p`` on ``[0, 1]^2``.

    ``J(u) = |u - a|^2`` and ``Theta(u) = 0.2 + 0.4 (u1 + u2)``.  With
    ``active=True`` the unconstrained minimizer ``a`` violates the constraint.
    Multipliers come from the KKT conditions at the grid minimizers:
    ``grad J = mu grad Theta`` and ``grad(J/Theta) = lambda grad Theta``.
    """
    a = np.array([0.2, 0.3]) if active else np.array([0.9, 0.9])
    g_theta = np.array([0.4, 0.4])

    def J(u1, u2):
        return (u1 - a[0]) ** 2 + (u2 - a[1]) ** 2

    def theta(u1, u2):
        return 0.2 + 0.4 * (u1 + u2)

    s = np.linspace(0.0, 1.0, n_grid)
    U1, U2 = np.meshgrid(s, s, indexing="ij")
    Jv, Tv = J(U1, U2), theta(U1, U2)
    feasible = Tv >= p - 1e-12
    plain = np.where(feasible, Jv, np.inf)
    ratio = np.where(feasible, Jv / Tv, np.inf)
    i2 = np.unravel_index(np.argmin(plain), plain.shape)
    i1 = np.unravel_index(np.argmin(ratio), ratio.shape)
    u_plain = np.array([s[i2[0]], s[i2[1]]])
    u_ratio = np.array([s[i1[0]], s[i1[1]]])
    same = bool(np.array_equal(u_plain, u_ratio))

    t_star = float(theta(*u_plain))
    j_star = float(J(*u_plain))
    applicable = bool(abs(t_star - p) <= 1e-9)
    grad_j = 2.0 * (u_plain - a)
    mu = float(grad_j @ g_theta / (g_theta @ g_theta))
    grad_ratio = grad_j / t_star - j_star * g_theta / t_star**2
    lam = float(grad_ratio @ g_theta / (g_theta @ g_theta))
    residual = abs(mu - (j_star / t_star + lam * t_star)) if applicable else float("nan")
    return ToyReport(
        applicable=applicable,
        argmin_ratio=u_ratio,
        argmin_plain=u_plain,
        same_argmin=same,
        mu_star=mu,
        lambda_star=lam,
        relation_residual=residual,
        condition_holds=check_lemma_condition(j_star, t_star, mu),
    )
