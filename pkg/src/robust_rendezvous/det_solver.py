"""Deterministic optimal control with an augmented-Lagrangian terminal constraint.

Three problems share one machinery, all posed on a fixed RK4 grid with
piecewise-constant controls in the unit ball:

* the fuel-optimal rendezvous from ``x_i`` (:func:`solve_deterministic`),
* the recourse after an engine failure, which coasts through the outage and
  then minimizes fuel from the recovery node (:func:`solve_recourse`),
* the L2 projection of a control onto the set of target-hitting controls
  (:func:`project_control`).

Two primal-dual iterations are available.  ``method="gradient"`` is the
classical Arrow-Hurwicz loop: forward sweep, adjoint from the transversality
condition ``lambda(t_f) = (upsilon + c*delta, -1)``, a projected proximal
gradient step on the control and a dual ascent step on ``upsilon``.  It is
slow (tens of thousands of sweeps for the reference mission) and is kept as
a reference.  ``method="linearized"`` (default) linearizes the terminal map
with the exact discrete Jacobian, takes a proximal step on the control with
an adaptive proximal weight and solves for the multiplier of the linearized
constraint with a small Newton iteration.  It converges in tens of sweeps.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path

import numba
import numpy as np

from robust_rendezvous.dynamics import STATE_DIM, DynamicsDomainError, MissionSpec
from robust_rendezvous.failures import FailureScenario
from robust_rendezvous.propagation import (
    ControlTrajectory,
    StateTrajectory,
    TimeGrid,
    backward_sweep,
    integrate,
    snapped_scenario,
    terminal_jacobian,
)

_E6 = np.hstack([np.eye(6), np.zeros((6, 1))])


class SolveStatus(str, Enum):
    HIT = "Converged-Hit"
    MISSED = "Converged-Missed"
    DIVERGED = "Diverged"


@dataclass(frozen=True)
class AugLagParams:
    """Settings of the deterministic solvers.

    ``c`` is the augmentation weight of the gradient method.  The
    linearized method uses ``dual_step`` as its proximal dual step instead.
    ``stall_window`` defaults to 200 sweeps for the gradient method and 10
    for the linearized one.
    """

    c: float = 10.0
    max_iters: int = 2000
    tol_target: float = 1e-5
    tol_stall: float = 1e-6
    stall_window: int | None = None
    method: str = "linearized"
    eps_u: float = 0.01
    rho_dual: float = 10.0
    dual_step: float = 100.0
    tau0: float = 0.5
    tau_max: float = 1e3
    tol_value: float = 1e-9

    def __post_init__(self):
        if self.method not in ("linearized", "gradient"):
            raise ValueError(f"unknown method {self.method!r}")
        for name in ("c", "tol_target", "tol_stall", "eps_u", "rho_dual", "dual_step", "tau0",
                     "tau_max", "tol_value"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.stall_window is not None and self.stall_window < 1:
            raise ValueError("stall_window must be at least 1")

    @property
    def window(self) -> int:
        if self.stall_window is not None:
            return self.stall_window
        return 200 if self.method == "gradient" else 10

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class DetSolution:
    """Outcome of one deterministic solve.

    For recourse solves the trajectories live on the full mission grid:
    states before ``start_index`` are nan and controls there are zero.
    ``consumption`` is always the mission total ``m(t_i) - m(t_f)``.
    """

    u_star: ControlTrajectory
    x_star: StateTrajectory
    consumption: float
    upsilon: np.ndarray
    delta: np.ndarray
    status: SolveStatus
    iterations: int
    start_index: int = 0
    free_index: int = 0
    history: list = field(default_factory=list, repr=False)

    @property
    def deviation(self) -> float:
        return float(np.linalg.norm(self.delta))

    @property
    def hit(self) -> bool:
        return self.status is SolveStatus.HIT

    def write_convergence_csv(self, path: Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "deviation", "consumption"] + [f"upsilon_{j}" for j in range(1, 7)])
            for it, dev, cons, ups in self.history:
                w.writerow([it, f"{dev:.9g}", f"{cons:.9g}"] + [f"{v:.9g}" for v in ups])


@dataclass
class _Problem:
    spec: MissionSpec
    grid: TimeGrid
    x0: np.ndarray
    i0: int          # node where the state is given
    ia: int          # first interval whose control is free; [i0, ia) is forced to zero
    target: np.ndarray | None = None   # set for the projection problem

    @property
    def kappa(self) -> float:
        """Fuel per unit of thrust magnitude on one interval."""
        return self.grid.h * self.spec.thrust / self.spec.g0isp

    def objective(self, U: np.ndarray, xs: np.ndarray) -> float:
        if self.target is None:
            return float(self.spec.x_i[6] - xs[-1, 6])
        return 0.5 * self.grid.h * float(np.sum((U - self.target) ** 2))

    def forward(self, U: np.ndarray) -> np.ndarray | None:
        try:
            return integrate(self.x0, U, self.grid, self.spec, self.i0)
        except DynamicsDomainError:
            return None


# --------------------------------------------------------------------------
# proximal maps


def _ball(U: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(U, axis=1)
    return U / np.maximum(1.0, n)[:, None]


# --------------------------------------------------------------------------
# iterations


def _classify(hist: list, params: AugLagParams, ups_norms: list) -> SolveStatus | None:
    """Stall test on the last ``window`` iterates.

    A hit needs the deviation below ``tol_target`` and stable to
    ``tol_stall``; the linearized method also asks for a stable objective.
    A miss is a deviation stable above the target tolerance while the
    multiplier keeps growing.
    """
    w = params.window
    if len(hist) < w:
        return None
    devs = [row[1] for row in hist[-w:]]
    spread = max(devs) - min(devs)
    if max(devs) <= params.tol_target and spread < params.tol_stall:
        if params.method == "gradient":
            return SolveStatus.HIT
        vals = [row[4] for row in hist[-w:]]
        if max(vals) - min(vals) <= params.tol_value:
            return SolveStatus.HIT
    if len(hist) > w and min(devs) > params.tol_target and spread < params.tol_stall \
            and ups_norms[-1] > ups_norms[-w - 1]:
        return SolveStatus.MISSED
    return None


def _solve_linearized(prob: _Problem, U: np.ndarray, ups: np.ndarray, params: AugLagParams):
    grid, spec = prob.grid, prob.spec
    n, h, ia = grid.n_steps, grid.h, prob.ia
    U = U.copy()
    xs = prob.forward(U)
    if xs is None:
        return U, None, ups, SolveStatus.DIVERGED, 0, []
    d = xs[-1, :6] - spec.x_f
    tau = params.tau0
    cdual = params.dual_step
    hist: list = []
    ups_norms = [float(np.linalg.norm(ups))]
    it = 0
    for it in range(1, params.max_iters + 1):
        _, gel, rho = terminal_jacobian(xs, U, grid, spec, _E6, prob.i0)
        Uf = U[ia:]
        nrm = np.linalg.norm(Uf, axis=1)
        dirs = np.where(nrm[:, None] > 0, Uf / np.maximum(nrm, 1e-300)[:, None], 0.0)
        J = np.ascontiguousarray(gel[:, ia:, :] + rho[:, ia:, None] * dirs[None])
        while True:
            if prob.target is None:
                w, center, thr = 1.0 / tau, Uf, prob.kappa * tau / h
            else:
                w = 1.0 + 1.0 / tau
                center = (prob.target[ia:] + Uf / tau) / w
                thr = 0.0
            Un = np.empty_like(Uf)
            v, lin = _newton_solve(J, Uf, np.ascontiguousarray(center), thr, h * w, ups, cdual, d, Un)
            trial = U.copy()
            trial[ia:] = Un
            xn = prob.forward(trial)
            if xn is not None and np.all(np.isfinite(xn[-1])):
                dn = xn[-1, :6] - spec.x_f
                pred = float(np.linalg.norm(lin - d))
                err = float(np.linalg.norm(dn - lin))
                if err <= 0.5 * pred + 1e-10:
                    break
            tau *= 0.25
            if tau < 1e-10:
                return U, xs, ups, SolveStatus.DIVERGED, it, hist
        U, xs, d, ups = trial, xn, dn, v
        if err < 0.1 * pred:
            tau = min(2.0 * tau, params.tau_max)
        hist.append((it, float(np.linalg.norm(d)), float(spec.x_i[6] - xs[-1, 6]), ups.copy(),
                     prob.objective(U, xs)))
        ups_norms.append(float(np.linalg.norm(ups)))
        status = _classify(hist, params, ups_norms)
        if status is not None:
            return U, xs, ups, status, it, hist
    return U, xs, ups, SolveStatus.DIVERGED, it, hist


@numba.njit(cache=True)
def _prox_rows(J, Uf, center, thr, hw, v, d, Un, M, want_m):
    """Primal response ``u(v)`` of the linearized subproblem, row by row.

    Writes the controls into ``Un``, returns the linearized deviation and,
    when ``want_m`` is set, accumulates ``J D J^T / hw`` into ``M``.
    """
    m = J.shape[0]
    lin = d.copy()
    if want_m:
        M[:, :] = 0.0
    a = np.empty(3)
    du = np.empty(3)
    D = np.empty((3, 3))
    JD = np.empty((m, 3))
    for i in range(Uf.shape[0]):
        for k in range(3):
            acc = 0.0
            for j in range(m):
                acc += J[j, i, k] * v[j]
            a[k] = center[i, k] - acc / hw
        na = math.sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2])
        fac = 1.0 - thr / na if na > thr else 0.0
        nu = na * fac
        scale = fac / nu if nu > 1.0 else fac
        for k in range(3):
            Un[i, k] = a[k] * scale
            du[k] = Un[i, k] - Uf[i, k]
        for j in range(m):
            lin[j] += J[j, i, 0] * du[0] + J[j, i, 1] * du[1] + J[j, i, 2] * du[2]
        if not want_m or fac == 0.0:
            continue
        for k in range(3):
            for l in range(3):
                if nu > 1.0:
                    D[k, l] = ((1.0 if k == l else 0.0) - a[k] * a[l] / (na * na)) / na
                else:
                    D[k, l] = fac * (1.0 if k == l else 0.0) + thr / (na * na * na) * a[k] * a[l]
        for j in range(m):
            for l in range(3):
                JD[j, l] = J[j, i, 0] * D[0, l] + J[j, i, 1] * D[1, l] + J[j, i, 2] * D[2, l]
        for j in range(m):
            for q in range(j, m):
                val = (JD[j, 0] * J[q, i, 0] + JD[j, 1] * J[q, i, 1] + JD[j, 2] * J[q, i, 2]) / hw
                M[j, q] += val
                if q != j:
                    M[q, j] += val
    return lin


@numba.njit(cache=True)
def _newton_solve(J, Uf, center, thr, hw, ups, cdual, d, Un, max_newton=50):
    m = J.shape[0]
    M = np.zeros((m, m))
    Mdummy = np.zeros((m, m))
    v = ups.copy()
    lin = _prox_rows(J, Uf, center, thr, hw, v, d, Un, M, True)
    F = v - ups - cdual * lin
    for _ in range(max_newton):
        fn = math.sqrt(np.sum(F * F))
        if fn <= 1e-12 * (1.0 + math.sqrt(np.sum(v * v))):
            break
        H = np.eye(m) + cdual * M
        step = np.linalg.solve(H, -F)
        t = 1.0
        while True:
            vt = v + t * step
            lin = _prox_rows(J, Uf, center, thr, hw, vt, d, Un, Mdummy, False)
            Ft = vt - ups - cdual * lin
            if math.sqrt(np.sum(Ft * Ft)) < fn or t < 1e-4:
                break
            t *= 0.5
        v = vt
        lin = _prox_rows(J, Uf, center, thr, hw, v, d, Un, M, True)
        F = v - ups - cdual * lin
    return v, lin


def transversality_costate(upsilon, delta, c: float, fuel: bool = True) -> np.ndarray:
    """Terminal costate of the augmented Lagrangian ``K + ups.C + c/2 |C|^2``.

    The mass row is -1 for fuel problems (``K = m_i - m_f``) and 0 for the
    projection problem, whose cost does not involve the final mass.
    """
    return np.r_[np.asarray(upsilon, dtype=float) + c * np.asarray(delta, dtype=float), -1.0 if fuel else 0.0]


def _solve_gradient(prob: _Problem, U: np.ndarray, ups: np.ndarray, params: AugLagParams):
    grid, spec = prob.grid, prob.spec
    h, ia = grid.h, prob.ia
    c, eps = params.c, params.eps_u
    U = U.copy()
    hist: list = []
    ups_norms = [float(np.linalg.norm(ups))]
    xs = prob.forward(U)
    it = 0
    for it in range(1, params.max_iters + 1):
        if xs is None:
            return U, None, ups, SolveStatus.DIVERGED, it, hist
        d = xs[-1, :6] - spec.x_f
        lam_f = transversality_costate(ups, d, c, fuel=prob.target is None)
        _, gel, rho = backward_sweep(xs, U, grid, spec, lam_f, prob.i0)
        A = U[ia:] - eps * gel[ia:] / h
        if prob.target is None:
            # proximal treatment of the |u| term; rho is its coefficient
            na = np.linalg.norm(A, axis=1)
            thr = eps * rho[ia:] / h
            fac = np.where(na > thr, 1.0 - thr / np.maximum(na, 1e-300), 0.0)
            A = A * fac[:, None]
        else:
            A = A - eps * (U[ia:] - prob.target[ia:])
        U[ia:] = _ball(A)
        ups = ups + params.rho_dual * d
        xs = prob.forward(U)
        if xs is None:
            return U, None, ups, SolveStatus.DIVERGED, it, hist
        dn = xs[-1, :6] - spec.x_f
        hist.append((it, float(np.linalg.norm(dn)), float(spec.x_i[6] - xs[-1, 6]), ups.copy(),
                     prob.objective(U, xs)))
        ups_norms.append(float(np.linalg.norm(ups)))
        status = _classify(hist, params, ups_norms)
        if status is not None:
            return U, xs, ups, status, it, hist
    return U, xs, ups, SolveStatus.DIVERGED, it, hist


def _run(prob: _Problem, U0: np.ndarray, ups0, params: AugLagParams) -> DetSolution:
    ups0 = np.zeros(6) if ups0 is None else np.asarray(ups0, dtype=float).copy()
    U0 = U0.copy()
    U0[: prob.i0] = 0.0
    U0[prob.i0: prob.ia] = 0.0
    U0[prob.ia:] = _ball(U0[prob.ia:])
    solver = _solve_linearized if params.method == "linearized" else _solve_gradient
    U, xs, ups, status, iters, hist = solver(prob, U0, ups0, params)
    if xs is None:
        xs = np.full((prob.grid.n_steps + 1, STATE_DIM), np.nan)
    delta = xs[-1, :6] - prob.spec.x_f
    if status is SolveStatus.HIT and not (np.linalg.norm(delta) <= params.tol_target
                                           and np.all(np.linalg.norm(U, axis=1) <= 1.0 + 1e-12)):
        status = SolveStatus.DIVERGED
    return DetSolution(
        u_star=ControlTrajectory(prob.grid, U),
        x_star=StateTrajectory(prob.grid, xs),
        consumption=float(prob.spec.x_i[6] - xs[-1, 6]),
        upsilon=ups,
        delta=delta,
        status=status,
        iterations=iters,
        start_index=prob.i0,
        free_index=prob.ia,
        history=[(it, dev, cons, u) for it, dev, cons, u, _ in hist],
    )


# --------------------------------------------------------------------------
# public API


def solve_deterministic(spec: MissionSpec, params: AugLagParams = AugLagParams(),
                        u0: ControlTrajectory | None = None, n_steps: int = 512,
                        upsilon0=None) -> DetSolution:
    """Fuel-optimal rendezvous from ``spec.x_i``.

    Starts from full tangential thrust unless ``u0`` is given, in which case
    the grid of ``u0`` is used.
    """
    grid = u0.grid if u0 is not None else TimeGrid(spec.t_i, spec.t_f, n_steps)
    if u0 is None:
        u0 = ControlTrajectory.constant(grid, (0.0, 1.0, 0.0))
    if not u0.is_admissible(1e-9):
        raise ValueError("initial control leaves the unit ball")
    prob = _Problem(spec, grid, spec.x_i.copy(), 0, 0)
    return _run(prob, u0.values, upsilon0, params)


def solve_recourse(x_tp, scen: FailureScenario, spec: MissionSpec,
                   params: AugLagParams = AugLagParams(), v0: ControlTrajectory | None = None,
                   upsilon0=None, grid: TimeGrid | None = None) -> DetSolution:
    """Cheapest way to the target after a failure at ``scen.t_p``.

    ``x_tp`` is the state at the failure node (``t_p`` snapped to the grid).
    The engine is off until the snapped recovery node, after which the
    control is free.  ``v0`` (a full-grid control, typically the nominal one)
    warm-starts the free part and ``upsilon0`` the multiplier.
    """
    if scen.t_p >= spec.t_f:
        raise ValueError("recourse needs a failure before t_f")
    grid = v0.grid if v0 is not None else (grid or TimeGrid(spec.t_i, spec.t_f, 512))
    k_p, k_r = snapped_scenario(scen, grid)
    n = grid.n_steps
    if k_p >= n:
        k_p = n
    U0 = np.zeros((n, 3)) if v0 is None else v0.values.copy()
    if v0 is None:
        U0[:, 1] = 1.0
    prob = _Problem(spec, grid, np.asarray(x_tp, dtype=float).copy(), k_p, min(k_r, n))
    if k_r >= n:
        U = np.zeros((n, 3))
        xs = prob.forward(U)
        if xs is None:
            xs = np.full((n + 1, STATE_DIM), np.nan)
            status = SolveStatus.DIVERGED
        else:
            dev = np.linalg.norm(xs[-1, :6] - spec.x_f)
            status = SolveStatus.HIT if dev <= params.tol_target else SolveStatus.MISSED
        return DetSolution(ControlTrajectory(grid, U), StateTrajectory(grid, xs),
                           float(spec.x_i[6] - xs[-1, 6]), np.zeros(6), xs[-1, :6] - spec.x_f,
                           status, 0, start_index=k_p, free_index=n)
    return _run(prob, U0, upsilon0, params)


def project_control(u_half: ControlTrajectory, spec: MissionSpec,
                    params: AugLagParams = AugLagParams(), u_start: ControlTrajectory | None = None,
                    upsilon0=None) -> DetSolution:
    """L2-nearest admissible, target-hitting control to ``u_half``.

    A control that is already admissible and within ``tol_target`` of the
    target is returned as is.  ``u_start`` (default: ``u_half`` clipped to
    the ball) seeds the iteration.
    """
    grid = u_half.grid
    prob = _Problem(spec, grid, spec.x_i.copy(), 0, 0, target=u_half.values.copy())
    if u_half.is_admissible():
        xs = prob.forward(u_half.values)
        if xs is not None:
            delta = xs[-1, :6] - spec.x_f
            if np.linalg.norm(delta) <= params.tol_target:
                ups = np.zeros(6) if upsilon0 is None else np.asarray(upsilon0, dtype=float).copy()
                return DetSolution(ControlTrajectory(grid, u_half.values.copy()), StateTrajectory(grid, xs),
                                   float(spec.x_i[6] - xs[-1, 6]), ups, delta, SolveStatus.HIT, 0)
    start = u_start.values if u_start is not None else u_half.values
    return _run(prob, start, upsilon0, params)


def switch_times(u: ControlTrajectory, threshold: float = 0.5) -> np.ndarray:
    """Times where the thrust magnitude crosses ``threshold``.

    The crossing is placed at the node between the two intervals.
    """
    on = u.norms() > threshold
    idx = np.nonzero(np.diff(on.astype(int)))[0] + 1
    return u.grid.nodes[idx]


def kkt_residual(sol: DetSolution, spec: MissionSpec) -> float:
    """L2 norm of the proximal-gradient residual of a fuel solve.

    Uses the terminal costate ``(upsilon, -1)`` and unit proximal step; it
    vanishes at a stationary point of the discretized problem.
    """
    grid = sol.u_star.grid
    i0 = sol.start_index
    U = sol.u_star.values
    lam_f = np.r_[sol.upsilon, -1.0]
    _, gel, rho = backward_sweep(sol.x_star.states, U, grid, spec, lam_f, i0)
    h = grid.h
    free = np.zeros(grid.n_steps, dtype=bool)
    free[sol.free_index:] = True
    A = U - gel / h
    na = np.linalg.norm(A, axis=1)
    thr = rho / h
    fac = np.where(na > thr, 1.0 - thr / np.maximum(na, 1e-300), 0.0)
    P = _ball(A * fac[:, None])
    r = (U - P)[free]
    return float(np.sqrt(h * np.sum(r**2)))
