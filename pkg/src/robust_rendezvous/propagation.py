"""Fixed-step RK4 flows, failure flows and the exact discrete adjoint.

Controls are piecewise constant on a uniform grid.  The backward sweep is
the reverse-mode derivative of the RK4 recursion itself, so gradients it
returns are the exact gradients of the discretized problem.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numba
import numpy as np

from robust_rendezvous.dynamics import (
    CONTROL_DIM,
    CONTROL_NAMES,
    STATE_DIM,
    STATE_NAMES,
    DynamicsDomainError,
    MissionSpec,
    _jac_u_elements,
    _jac_x,
    _rhs,
)
from robust_rendezvous.failures import FailureScenario


@dataclass(frozen=True)
class TimeGrid:
    t_i: float
    t_f: float
    n_steps: int = 512

    def __post_init__(self):
        if not self.t_i < self.t_f:
            raise ValueError("grid needs t_i < t_f")
        if self.n_steps < 2:
            raise ValueError("grid needs at least 2 steps")

    @property
    def h(self) -> float:
        return (self.t_f - self.t_i) / self.n_steps

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(self.t_i, self.t_f, self.n_steps + 1)

    def snap(self, t: float) -> int:
        """Index of the node nearest to ``t`` (clamped to the grid)."""
        k = int(round((t - self.t_i) / self.h))
        return min(max(k, 0), self.n_steps)

    def index_of(self, t: float) -> int:
        k = self.snap(t)
        if abs(self.t_i + k * self.h - t) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"time {t} is not a grid node")
        return k

    def time(self, k: int) -> float:
        return self.t_i + k * self.h


@dataclass(frozen=True)
class ControlTrajectory:
    grid: TimeGrid
    values: np.ndarray  # (n_steps, 3)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.grid.n_steps, CONTROL_DIM):
            raise ValueError(f"control shape {v.shape} does not match grid")
        object.__setattr__(self, "values", v)

    @classmethod
    def constant(cls, grid: TimeGrid, u) -> "ControlTrajectory":
        return cls(grid, np.tile(np.asarray(u, dtype=float), (grid.n_steps, 1)))

    def norms(self) -> np.ndarray:
        return np.linalg.norm(self.values, axis=1)

    def is_admissible(self, tol: float = 1e-12) -> bool:
        return bool(np.all(self.norms() <= 1.0 + tol))


@dataclass(frozen=True)
class StateTrajectory:
    grid: TimeGrid
    states: np.ndarray  # (n_steps + 1, 7); rows outside the integrated span are nan

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    def at(self, k: int) -> np.ndarray:
        return self.states[k]


# --------------------------------------------------------------------------
# jitted kernels


@numba.njit(cache=True)
def _rk4_step(x, u, h, nu, thrust, g0isp, out, k1, k2, k3, k4, tmp):
    _rhs(x, u, nu, thrust, g0isp, k1)
    for j in range(7):
        tmp[j] = x[j] + 0.5 * h * k1[j]
    _rhs(tmp, u, nu, thrust, g0isp, k2)
    for j in range(7):
        tmp[j] = x[j] + 0.5 * h * k2[j]
    _rhs(tmp, u, nu, thrust, g0isp, k3)
    for j in range(7):
        tmp[j] = x[j] + h * k3[j]
    _rhs(tmp, u, nu, thrust, g0isp, k4)
    for j in range(7):
        out[j] = x[j] + h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j])


@numba.njit(cache=True)
def _forward(xs, us, i0, i1, h, nu, thrust, g0isp):
    """Integrate from node ``i0`` (state already in ``xs[i0]``) to ``i1``.

    Returns False if a non-finite or non-physical state appeared.
    """
    k1 = np.empty(7)
    k2 = np.empty(7)
    k3 = np.empty(7)
    k4 = np.empty(7)
    tmp = np.empty(7)
    for n in range(i0, i1):
        _rk4_step(xs[n], us[n], h, nu, thrust, g0isp, xs[n + 1], k1, k2, k3, k4, tmp)
        xn = xs[n + 1]
        for j in range(7):
            if not np.isfinite(xn[j]):
                return False
        if xn[0] <= 0.0 or xn[6] <= 0.0:
            return False
    return True


@numba.njit(cache=True)
def _backward(xs, us, i0, i1, h, nu, thrust, g0isp, lam_end, lams, gel, rho):
    """Reverse-mode sweep of the RK4 recursion from node ``i1`` down to ``i0``.

    ``lams[i1]`` receives ``lam_end``; on return ``lams[n]`` is the gradient
    of the terminal functional w.r.t. the state at node ``n``.  For each
    interval, ``gel[n]`` is the gradient through the six element rates and
    ``rho[n]`` the coefficient multiplying the thrust magnitude ``|u_n|``.
    """
    k1 = np.empty(7)
    k2 = np.empty(7)
    k3 = np.empty(7)
    x2 = np.empty(7)
    x3 = np.empty(7)
    x4 = np.empty(7)
    jx = np.empty((7, 7))
    ju = np.empty((6, 3))
    a = np.empty(7)
    ak = np.empty(7)
    ax = np.empty(7)
    ak1 = np.empty(7)
    ak2 = np.empty(7)
    ak3 = np.empty(7)
    for j in range(7):
        lams[i1, j] = lam_end[j]
    gamma = -thrust / g0isp
    for n in range(i1 - 1, i0 - 1, -1):
        x = xs[n]
        u = us[n]
        # recompute stage points
        _rhs(x, u, nu, thrust, g0isp, k1)
        for j in range(7):
            x2[j] = x[j] + 0.5 * h * k1[j]
        _rhs(x2, u, nu, thrust, g0isp, k2)
        for j in range(7):
            x3[j] = x[j] + 0.5 * h * k2[j]
        _rhs(x3, u, nu, thrust, g0isp, k3)
        for j in range(7):
            x4[j] = x[j] + h * k3[j]
        for j in range(7):
            a[j] = lams[n + 1, j]
            ax[j] = a[j]
        g0 = 0.0
        g1 = 0.0
        g2 = 0.0
        r = 0.0
        # stage 4: weight h/6
        for j in range(7):
            ak[j] = h / 6.0 * a[j]
        _jac_x(x4, u, nu, thrust, g0isp, jx)
        _jac_u_elements(x4, nu, thrust, ju)
        for i in range(6):
            g0 += ju[i, 0] * ak[i]
            g1 += ju[i, 1] * ak[i]
            g2 += ju[i, 2] * ak[i]
        r += gamma * ak[6]
        for j in range(7):
            s = 0.0
            for i in range(7):
                s += jx[i, j] * ak[i]
            ax[j] += s
            ak3[j] = h / 3.0 * a[j] + h * s
        # stage 3
        _jac_x(x3, u, nu, thrust, g0isp, jx)
        _jac_u_elements(x3, nu, thrust, ju)
        for i in range(6):
            g0 += ju[i, 0] * ak3[i]
            g1 += ju[i, 1] * ak3[i]
            g2 += ju[i, 2] * ak3[i]
        r += gamma * ak3[6]
        for j in range(7):
            s = 0.0
            for i in range(7):
                s += jx[i, j] * ak3[i]
            ax[j] += s
            ak2[j] = h / 3.0 * a[j] + 0.5 * h * s
        # stage 2
        _jac_x(x2, u, nu, thrust, g0isp, jx)
        _jac_u_elements(x2, nu, thrust, ju)
        for i in range(6):
            g0 += ju[i, 0] * ak2[i]
            g1 += ju[i, 1] * ak2[i]
            g2 += ju[i, 2] * ak2[i]
        r += gamma * ak2[6]
        for j in range(7):
            s = 0.0
            for i in range(7):
                s += jx[i, j] * ak2[i]
            ax[j] += s
            ak1[j] = h / 6.0 * a[j] + 0.5 * h * s
        # stage 1
        _jac_x(x, u, nu, thrust, g0isp, jx)
        _jac_u_elements(x, nu, thrust, ju)
        for i in range(6):
            g0 += ju[i, 0] * ak1[i]
            g1 += ju[i, 1] * ak1[i]
            g2 += ju[i, 2] * ak1[i]
        r += gamma * ak1[6]
        for j in range(7):
            s = 0.0
            for i in range(7):
                s += jx[i, j] * ak1[i]
            ax[j] += s
        for j in range(7):
            lams[n, j] = ax[j]
        gel[n, 0] = g0
        gel[n, 1] = g1
        gel[n, 2] = g2
        rho[n] = r


@numba.njit(cache=True)
def _backward_multi(xs, us, i0, i1, h, nu, thrust, g0isp, lam_end, lam0, gel, rho):
    """Several adjoint sweeps at once, sharing the stage Jacobians.

    ``lam_end`` is ``(m, 7)``; outputs are ``lam0 (m, 7)`` at node ``i0``,
    ``gel (m, n, 3)`` and ``rho (m, n)`` with the meaning of :func:`_backward`.
    """
    m = lam_end.shape[0]
    k1 = np.empty(7)
    k2 = np.empty(7)
    x2 = np.empty(7)
    x3 = np.empty(7)
    x4 = np.empty(7)
    jx4 = np.empty((7, 7))
    jx3 = np.empty((7, 7))
    jx2 = np.empty((7, 7))
    jx1 = np.empty((7, 7))
    ju4 = np.empty((6, 3))
    ju3 = np.empty((6, 3))
    ju2 = np.empty((6, 3))
    ju1 = np.empty((6, 3))
    a = lam_end.copy()
    ax = np.empty(7)
    ak4 = np.empty(7)
    ak3 = np.empty(7)
    ak2 = np.empty(7)
    ak1 = np.empty(7)
    gamma = -thrust / g0isp
    for n in range(i1 - 1, i0 - 1, -1):
        x = xs[n]
        u = us[n]
        _rhs(x, u, nu, thrust, g0isp, k1)
        for j in range(7):
            x2[j] = x[j] + 0.5 * h * k1[j]
        _rhs(x2, u, nu, thrust, g0isp, k2)
        for j in range(7):
            x3[j] = x[j] + 0.5 * h * k2[j]
        _rhs(x3, u, nu, thrust, g0isp, k1)
        for j in range(7):
            x4[j] = x[j] + h * k1[j]
        _jac_x(x4, u, nu, thrust, g0isp, jx4)
        _jac_x(x3, u, nu, thrust, g0isp, jx3)
        _jac_x(x2, u, nu, thrust, g0isp, jx2)
        _jac_x(x, u, nu, thrust, g0isp, jx1)
        _jac_u_elements(x4, nu, thrust, ju4)
        _jac_u_elements(x3, nu, thrust, ju3)
        _jac_u_elements(x2, nu, thrust, ju2)
        _jac_u_elements(x, nu, thrust, ju1)
        for r in range(m):
            for j in range(7):
                ax[j] = a[r, j]
                ak4[j] = h / 6.0 * a[r, j]
            g0 = 0.0
            g1 = 0.0
            g2 = 0.0
            rr = gamma * ak4[6]
            for i in range(6):
                g0 += ju4[i, 0] * ak4[i]
                g1 += ju4[i, 1] * ak4[i]
                g2 += ju4[i, 2] * ak4[i]
            for j in range(7):
                s = 0.0
                for i in range(7):
                    s += jx4[i, j] * ak4[i]
                ax[j] += s
                ak3[j] = h / 3.0 * a[r, j] + h * s
            rr += gamma * ak3[6]
            for i in range(6):
                g0 += ju3[i, 0] * ak3[i]
                g1 += ju3[i, 1] * ak3[i]
                g2 += ju3[i, 2] * ak3[i]
            for j in range(7):
                s = 0.0
                for i in range(7):
                    s += jx3[i, j] * ak3[i]
                ax[j] += s
                ak2[j] = h / 3.0 * a[r, j] + 0.5 * h * s
            rr += gamma * ak2[6]
            for i in range(6):
                g0 += ju2[i, 0] * ak2[i]
                g1 += ju2[i, 1] * ak2[i]
                g2 += ju2[i, 2] * ak2[i]
            for j in range(7):
                s = 0.0
                for i in range(7):
                    s += jx2[i, j] * ak2[i]
                ax[j] += s
                ak1[j] = h / 6.0 * a[r, j] + 0.5 * h * s
            rr += gamma * ak1[6]
            for i in range(6):
                g0 += ju1[i, 0] * ak1[i]
                g1 += ju1[i, 1] * ak1[i]
                g2 += ju1[i, 2] * ak1[i]
            for j in range(7):
                s = 0.0
                for i in range(7):
                    s += jx1[i, j] * ak1[i]
                ax[j] += s
            for j in range(7):
                a[r, j] = ax[j]
            gel[r, n, 0] = g0
            gel[r, n, 1] = g1
            gel[r, n, 2] = g2
            rho[r, n] = rr
    for r in range(m):
        for j in range(7):
            lam0[r, j] = a[r, j]


# --------------------------------------------------------------------------
# python wrappers


def _consts(spec: MissionSpec):
    return spec.nu, spec.thrust, spec.g0isp


def integrate(x0, controls: np.ndarray, grid: TimeGrid, spec: MissionSpec,
              i0: int = 0, i1: int | None = None, out: np.ndarray | None = None) -> np.ndarray:
    """Node states from ``i0`` to ``i1`` as an ``(n_steps+1, 7)`` array.

    Rows outside ``[i0, i1]`` are left as nan (or untouched when ``out`` is
    given).
    """
    i1 = grid.n_steps if i1 is None else i1
    if out is None:
        out = np.full((grid.n_steps + 1, STATE_DIM), np.nan)
    out[i0] = x0
    if not _forward(out, controls, i0, i1, grid.h, *_consts(spec)):
        raise DynamicsDomainError("state left the physical domain during integration")
    return out


def flow(x0, u: ControlTrajectory, s: float, s2: float, spec: MissionSpec):
    """State reached from ``x0`` at time ``s`` after flowing to ``s2`` under ``u``.

    ``s`` and ``s2`` must be grid nodes of ``u.grid``.  Returns the final
    state and the trajectory (nan outside ``[s, s2]``).
    """
    grid = u.grid
    i0, i1 = grid.index_of(s), grid.index_of(s2)
    if i1 < i0:
        raise ValueError("flow requires s <= s2")
    xs = integrate(np.asarray(x0, dtype=float), u.values, grid, spec, i0, i1)
    return xs[i1].copy(), StateTrajectory(grid, xs)


def snapped_scenario(scen: FailureScenario, grid: TimeGrid) -> tuple[int, int]:
    """Node indices of failure start and engine recovery (recovery clamped to t_f)."""
    k_p = grid.snap(scen.t_p)
    k_r = grid.snap(scen.t_p + scen.t_d)
    return k_p, max(k_r, k_p)


def masked_controls(u: np.ndarray, k_p: int, k_r: int) -> np.ndarray:
    v = u.copy()
    v[k_p:k_r] = 0.0
    return v


def failure_flow(x0, u: ControlTrajectory, v: ControlTrajectory | None,
                 scen: FailureScenario, spec: MissionSpec) -> np.ndarray:
    """Final state under nominal ``u`` until the failure, a coast, then recourse ``v``.

    Failure times are snapped to the grid.  ``v`` is only read on the
    intervals after engine recovery and may be None when recovery happens at
    or after ``t_f``.
    """
    grid = u.grid
    if scen.t_p >= grid.t_f:
        return flow(x0, u, grid.t_i, grid.t_f, spec)[0]
    k_p, k_r = snapped_scenario(scen, grid)
    ctrl = u.values.copy()
    ctrl[k_p:k_r] = 0.0
    if k_r < grid.n_steps:
        if v is None:
            raise ValueError("a recourse control is needed when the engine recovers before t_f")
        ctrl[k_r:] = v.values[k_r:]
    xs = integrate(np.asarray(x0, dtype=float), ctrl, grid, spec)
    return xs[-1].copy()


def backward_sweep(xs: np.ndarray, controls: np.ndarray, grid: TimeGrid, spec: MissionSpec,
                   lam_end, i0: int = 0, i1: int | None = None,
                   jumps: dict[int, np.ndarray] | None = None):
    """Adjoint sweep from node ``i1`` to ``i0`` with optional jumps.

    Returns ``(lams, gel, rho)``: node adjoints, element-rate control
    gradients per interval and thrust-magnitude coefficients per interval.
    A jump at node ``k`` is added to the adjoint when the sweep reaches
    ``k`` (the left limit at ``k`` is what propagates further back).
    """
    i1 = grid.n_steps if i1 is None else i1
    n = grid.n_steps
    lams = np.full((n + 1, STATE_DIM), np.nan)
    gel = np.zeros((n, CONTROL_DIM))
    rho = np.zeros(n)
    lam = np.asarray(lam_end, dtype=float).copy()
    cuts = sorted(k for k in (jumps or {}) if i0 <= k <= i1)
    consts = _consts(spec)
    hi = i1
    if hi in cuts:
        lam = lam + jumps[hi]
    for k in reversed(cuts):
        if k == i1:
            continue
        _backward(xs, controls, k, hi, grid.h, *consts, lam, lams, gel, rho)
        lam = lams[k] + jumps[k]
        hi = k
    _backward(xs, controls, i0, hi, grid.h, *consts, lam, lams, gel, rho)
    if not np.all(np.isfinite(lams[i0:i1 + 1])):
        raise FloatingPointError("non-finite adjoint")
    return lams, gel, rho


def terminal_jacobian(xs: np.ndarray, controls: np.ndarray, grid: TimeGrid, spec: MissionSpec,
                      lam_end: np.ndarray, i0: int = 0, i1: int | None = None):
    """Gradients of several terminal functionals ``lam_end @ x(t_f)`` at once.

    Returns ``(lam0, gel, rho)`` with shapes ``(m, 7)``, ``(m, n, 3)``,
    ``(m, n)``; intervals outside ``[i0, i1)`` are zero.
    """
    i1 = grid.n_steps if i1 is None else i1
    lam_end = np.ascontiguousarray(lam_end, dtype=float)
    m = lam_end.shape[0]
    lam0 = np.empty((m, STATE_DIM))
    gel = np.zeros((m, grid.n_steps, CONTROL_DIM))
    rho = np.zeros((m, grid.n_steps))
    _backward_multi(xs, controls, i0, i1, grid.h, *_consts(spec), lam_end, lam0, gel, rho)
    return lam0, gel, rho


def control_gradient(gel: np.ndarray, rho: np.ndarray, controls: np.ndarray) -> np.ndarray:
    """Full per-interval gradient with the zero-subgradient convention at ``u=0``."""
    norms = np.linalg.norm(controls, axis=1)
    g = gel.copy()
    nz = norms > 0
    g[nz] += rho[nz, None] * controls[nz] / norms[nz, None]
    return g


def adjoint_flow(xtraj: StateTrajectory, u: ControlTrajectory, spec: MissionSpec, lam_f,
                 jumps: list[tuple[float, np.ndarray]] | None = None) -> np.ndarray:
    """Node adjoints for terminal costate ``lam_f``, with jumps at grid nodes.

    At a jump node the returned row is the left limit ``lam(t) + jump``.
    """
    grid = u.grid
    jd: dict[int, np.ndarray] = {}
    for t, vec in jumps or []:
        k = grid.index_of(t)
        jd[k] = jd.get(k, 0.0) + np.asarray(vec, dtype=float)
    lams, _, _ = backward_sweep(xtraj.states, u.values, grid, spec, lam_f, jumps=jd)
    return lams


def write_trajectory_csv(path: Path, xs: StateTrajectory, u: ControlTrajectory) -> None:
    """One row per node; the last row repeats the final interval's control."""
    grid = xs.grid
    t = grid.nodes
    ctrl = np.vstack([u.values, u.values[-1:]])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("t",) + STATE_NAMES + CONTROL_NAMES)
        for k in range(grid.n_steps + 1):
            w.writerow([f"{t[k]:.9g}"] + [f"{v:.9g}" for v in xs.states[k]] + [f"{v:.9g}" for v in ctrl[k]])
