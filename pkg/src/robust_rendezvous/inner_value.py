"""Value and partial gradients of the per-scenario internal problem.

``W_r(x, t_p, t_d, mu)`` is the best achievable ``(K - mu) * I_r(|C|)`` after
a failure at ``t_p``.  It is evaluated through one recourse solve followed by
a case analysis on the consumption and the closest-approach deviation.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from robust_rendezvous.det_solver import AugLagParams, DetSolution, SolveStatus, solve_recourse
from robust_rendezvous.dynamics import STATE_DIM, MissionSpec
from robust_rendezvous.failures import FailureScenario
from robust_rendezvous.propagation import ControlTrajectory, TimeGrid, backward_sweep
from robust_rendezvous.smoothing import indicator_smooth


class InnerStatus(str, Enum):
    DO_NOTHING = "DoNothing"
    HIT_EXACT = "HitExact"
    NEAR_MISS = "NearMiss"
    DIVERGED = "Diverged"


@dataclass
class InnerSolution:
    value: float
    grad_x: np.ndarray
    grad_mu: float
    status: InnerStatus
    recourse: DetSolution | None = None


def _nothing(status: InnerStatus, rec: DetSolution | None) -> InnerSolution:
    return InnerSolution(0.0, np.zeros(STATE_DIM), 0.0, status, rec)


def _state_gradient(rec: DetSolution, spec: MissionSpec, lam_f: np.ndarray) -> np.ndarray:
    """Adjoint of ``lam_f`` carried back to the failure node (through the coast)."""
    grid = rec.u_star.grid
    lams, _, _ = backward_sweep(rec.x_star.states, rec.u_star.values, grid, spec, lam_f, rec.start_index)
    return lams[rec.start_index].copy()


def eval_W(x_tp, scen: FailureScenario, mu: float, r: float, spec: MissionSpec,
           params: AugLagParams = AugLagParams(), v0: ControlTrajectory | None = None,
           upsilon0=None, grid: TimeGrid | None = None) -> InnerSolution:
    """Evaluate ``W_r`` and its gradients at the failure state ``x_tp``.

    ``v0`` and ``upsilon0`` warm-start the recourse solve.  Gradients are with
    respect to the state at the (snapped) failure node and to ``mu``.
    """
    if mu < 0:
        raise ValueError("mu must be nonnegative")
    if r <= 0:
        raise ValueError("smoothing radius must be positive")
    rec = solve_recourse(x_tp, scen, spec, params, v0=v0, upsilon0=upsilon0, grid=grid)
    if rec.status is SolveStatus.DIVERGED:
        return _nothing(InnerStatus.DIVERGED, rec)
    gap = rec.consumption - mu
    if gap >= 0:
        return _nothing(InnerStatus.DO_NOTHING, rec)
    grad_K = np.zeros(STATE_DIM)
    grad_K[6] = -1.0
    if rec.status is SolveStatus.HIT:
        lam_f = grad_K.copy()
        lam_f[:6] = rec.upsilon
        return InnerSolution(gap, _state_gradient(rec, spec, lam_f), -1.0, InnerStatus.HIT_EXACT, rec)
    dev = rec.deviation
    if dev > r:
        return _nothing(InnerStatus.DO_NOTHING, rec)
    weight = indicator_smooth(dev, r)
    lam_f = weight * grad_K
    lam_f[:6] += gap * (-1.0 / r) * rec.delta / dev
    return InnerSolution(gap * weight, _state_gradient(rec, spec, lam_f), -weight, InnerStatus.NEAR_MISS, rec)
