"""Stochastic Arrow-Hurwicz loop for the failure-robust rendezvous.

Each iteration draws one failure, prices it through the internal problem,
moves the nominal control along the resulting adjoint gradient, restores
the rendezvous constraint by projection and updates the multiplier ``mu`` of
the probability constraint.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from robust_rendezvous.det_solver import (
    AugLagParams,
    DetSolution,
    project_control,
    solve_deterministic,
)
from robust_rendezvous.dynamics import STATE_DIM, MissionSpec, target_deviation
from robust_rendezvous.failures import pi_f, sample_conditional
from robust_rendezvous.inner_value import InnerStatus, eval_W
from robust_rendezvous.propagation import ControlTrajectory, StateTrajectory, TimeGrid, backward_sweep
from robust_rendezvous.smoothing import Schedules

log = logging.getLogger(__name__)

CONVERGENCE_COLUMNS = ("k", "t_p", "t_d", "inner_status", "mu", "consumption", "r_k", "eps_u_k", "eps_mu_k")


@dataclass
class StochRunConfig:
    spec: MissionSpec
    schedules: Schedules = field(default_factory=Schedules)
    n_iters: int = 5000
    mu0: float = 0.325
    seed: int = 0
    inner: AugLagParams = field(default_factory=lambda: AugLagParams(tol_value=1e-8))
    projection: AugLagParams = field(default_factory=AugLagParams)
    n_steps: int = 512
    log_every: int = 500
    checkpoint_every: int = 0
    checkpoint_path: Path | None = None

    def __post_init__(self):
        if self.n_iters < 1:
            raise ValueError("n_iters must be at least 1")
        if self.mu0 < 0:
            raise ValueError("mu0 must be nonnegative")
        if self.n_steps < 2:
            raise ValueError("n_steps must be at least 2")


@dataclass
class StochRunResult:
    u_star: ControlTrajectory
    x_star: StateTrajectory
    mu_trace: np.ndarray
    consumption_trace: np.ndarray
    scenario_log: list
    rows: list = field(repr=False, default_factory=list)
    do_nothing: int = 0
    diverged: int = 0
    projection_failures: int = 0
    warm_start: DetSolution | None = field(default=None, repr=False)
    deviation_trace: np.ndarray | None = field(default=None, repr=False)
    max_thrust_trace: np.ndarray | None = field(default=None, repr=False)

    @property
    def mu(self) -> float:
        return float(self.mu_trace[-1])

    @property
    def consumption(self) -> float:
        return float(self.consumption_trace[-1])

    def write_convergence_csv(self, path: Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CONVERGENCE_COLUMNS)
            for k, tp, td, status, mu, cons, r, eu, em in self.rows:
                w.writerow([k, f"{tp:.9g}", f"{td:.9g}", status, f"{mu:.9g}", f"{cons:.9g}",
                            f"{r:.9g}", f"{eu:.9g}", f"{em:.9g}"])


@dataclass
class _State:
    k: int
    U: np.ndarray
    mu: float
    ups_proj: np.ndarray
    rows: list
    counters: dict
    rng: np.random.Generator
    checks: list = field(default_factory=list)  # (||C(x^k(t_f))||, max_t ||u^k||)


def _save_checkpoint(path: Path, st: _State) -> None:
    rows = np.array([r[:3] + r[4:] for r in st.rows], dtype=float).reshape(-1, 8)
    statuses = np.array([r[3] for r in st.rows], dtype="U16")
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        np.savez(fh, k=st.k, U=st.U, mu=st.mu, ups_proj=st.ups_proj, rows=rows, statuses=statuses,
                 counters=json.dumps(st.counters), rng=json.dumps(st.rng.bit_generator.state),
                 checks=np.array(st.checks, dtype=float).reshape(-1, 2))
    tmp.replace(path)


def _load_checkpoint(path: Path) -> _State:
    with np.load(path) as z:
        rng = np.random.Generator(np.random.PCG64())
        rng.bit_generator.state = json.loads(str(z["rng"]))
        rows = [(int(r[0]), r[1], r[2], str(s), r[3], r[4], r[5], r[6], r[7])
                for r, s in zip(z["rows"], z["statuses"])]
        return _State(int(z["k"]), z["U"].copy(), float(z["mu"]), z["ups_proj"].copy(), rows,
                      json.loads(str(z["counters"])), rng, [tuple(c) for c in z["checks"]])


def run(config: StochRunConfig, warm_start: DetSolution | None = None,
        resume_from: Path | None = None) -> StochRunResult:
    """Run the stochastic Arrow-Hurwicz iteration.

    ``warm_start`` is the deterministic optimum (computed when omitted); it
    seeds the control and the recourse multipliers.  ``resume_from`` continues
    a run from a checkpoint written by an identical configuration.
    """
    spec, sch = config.spec, config.schedules
    pf = pi_f(spec.failure_law, spec.t_f)
    if spec.p < pf:
        log.info("p=%.4f is below pi_f=%.5f: the probability constraint is inactive", spec.p, pf)
    if warm_start is None:
        warm_start = solve_deterministic(spec, config.projection, n_steps=config.n_steps)
        if not warm_start.hit:
            raise RuntimeError(f"deterministic warm start failed: {warm_start.status.value}")
    grid = warm_start.u_star.grid
    if grid.n_steps != config.n_steps:
        raise ValueError("warm start grid does not match n_steps")
    ups_rec = warm_start.upsilon.copy()

    if resume_from is not None:
        st = _load_checkpoint(Path(resume_from))
    else:
        st = _State(0, warm_start.u_star.values.copy(), float(config.mu0), np.zeros(6), [],
                    {"do_nothing": 0, "diverged": 0, "projection_failures": 0},
                    np.random.Generator(np.random.PCG64(config.seed)))
    proj = project_control(ControlTrajectory(grid, st.U), spec, config.projection, upsilon0=st.ups_proj)
    if not proj.hit:
        raise RuntimeError("starting control does not meet the rendezvous constraint")
    U, xs = proj.u_star.values.copy(), proj.x_star.states
    h = grid.h
    lam_f = np.zeros(STATE_DIM)
    lam_f[6] = -pf

    while st.k < config.n_iters:
        k = st.k
        r_k, eps_u, eps_mu = sch.radius(k), sch.eps_u(k), sch.eps_mu(k)
        scen = sample_conditional(spec.failure_law, spec.t_f, st.rng)
        k_p = grid.snap(scen.t_p)
        u_cur = ControlTrajectory(grid, U)
        if st.mu <= 0.0:
            # K >= 0 so K - mu >= 0: nothing to pay for, skip the solve
            status, grad_x, grad_mu = InnerStatus.DO_NOTHING, None, 0.0
        else:
            inner = eval_W(xs[k_p], scen, st.mu, r_k, spec, config.inner, v0=u_cur, upsilon0=ups_rec)
            status, grad_x, grad_mu = inner.status, inner.grad_x, inner.grad_mu
            if status in (InnerStatus.DO_NOTHING, InnerStatus.DIVERGED):
                grad_x = None
        if status is InnerStatus.DIVERGED:
            st.counters["diverged"] += 1
        elif status is InnerStatus.DO_NOTHING:
            st.counters["do_nothing"] += 1

        if eps_u > 0:
            jumps = {k_p: (1.0 - pf) * grad_x} if grad_x is not None else None
            _, gel, rho = backward_sweep(xs, U, grid, spec, lam_f, jumps=jumps)
            A = U - eps_u * gel / h
            na = np.linalg.norm(A, axis=1)
            thr = eps_u * rho / h
            fac = np.where(na > thr, 1.0 - thr / np.maximum(na, 1e-300), 0.0)
            u_half = ControlTrajectory(grid, A * fac[:, None])
            p = project_control(u_half, spec, config.projection, u_start=u_cur, upsilon0=st.ups_proj)
            if p.hit:
                U, xs, st.ups_proj = p.u_star.values.copy(), p.x_star.states, p.upsilon
            else:
                st.counters["projection_failures"] += 1

        st.mu = max(0.0, st.mu + eps_mu * (spec.p - pf + (1.0 - pf) * grad_mu))
        cons = float(spec.x_i[6] - xs[-1, 6])
        st.checks.append((float(np.linalg.norm(target_deviation(xs[-1], spec))),
                          float(np.linalg.norm(U, axis=1).max())))
        st.rows.append((k, scen.t_p, scen.t_d, status.value, st.mu, cons, r_k, eps_u, eps_mu))
        st.k += 1
        if config.log_every and st.k % config.log_every == 0:
            log.info("k=%d mu=%.6f consumption=%.7f do_nothing=%d", st.k, st.mu, cons,
                     st.counters["do_nothing"])
        if config.checkpoint_path and config.checkpoint_every and st.k % config.checkpoint_every == 0:
            st.U = U
            _save_checkpoint(Path(config.checkpoint_path), st)

    rows = st.rows
    return StochRunResult(
        u_star=ControlTrajectory(grid, U),
        x_star=StateTrajectory(grid, xs),
        mu_trace=np.array([r[4] for r in rows]),
        consumption_trace=np.array([r[5] for r in rows]),
        scenario_log=[(r[1], r[2], r[3]) for r in rows],
        rows=rows,
        do_nothing=st.counters["do_nothing"],
        diverged=st.counters["diverged"],
        projection_failures=st.counters["projection_failures"],
        warm_start=warm_start,
        deviation_trace=np.array([c[0] for c in st.checks]),
        max_thrust_trace=np.array([c[1] for c in st.checks]),
    )
