import numpy as np
import pytest

import robust_rendezvous.det_solver as ds
from robust_rendezvous.det_solver import (
    AugLagParams,
    SolveStatus,
    kkt_residual,
    project_control,
    solve_deterministic,
    solve_recourse,
    switch_times,
    transversality_costate,
)
from robust_rendezvous.dynamics import target_deviation
from robust_rendezvous.failures import FailureScenario
from robust_rendezvous.propagation import ControlTrajectory, TimeGrid, integrate


def _assert_valid_hit(sol, spec, tol=1e-5):
    """Check the hit claim on the returned trajectory instead of trusting it."""
    assert sol.status is SolveStatus.HIT
    xs = integrate(sol.x_star.states[sol.start_index], sol.u_star.values, sol.u_star.grid, spec, sol.start_index)
    np.testing.assert_array_equal(xs[sol.start_index:], sol.x_star.states[sol.start_index:])
    assert np.linalg.norm(target_deviation(xs[-1], spec)) <= tol
    assert sol.u_star.norms().max() <= 1.0 + 1e-12


def test_params_validation():
    with pytest.raises(ValueError):
        AugLagParams(c=0.0)
    with pytest.raises(ValueError):
        AugLagParams(tol_target=-1.0)
    with pytest.raises(ValueError):
        AugLagParams(method="newton")
    assert AugLagParams().window == 10
    assert AugLagParams(method="gradient").window == 200
    assert AugLagParams(stall_window=7).window == 7


def test_reference_mission(det, spec):
    _assert_valid_hit(det, spec)
    ta, tb = switch_times(det.u_star)
    assert ta == pytest.approx(3.8983, abs=0.05)
    assert tb == pytest.approx(7.2980, abs=0.05)
    assert det.consumption == pytest.approx(0.32024, abs=1e-3)
    norms = det.u_star.norms()
    on = norms > 0.5
    # bang-off-bang: saturated or off everywhere except possibly at the switches
    assert np.mean((norms > 1 - 1e-6) | (norms < 1e-6)) > 0.98
    assert on[0] and on[-1] and not on[len(on) // 2 + 30]


def test_reference_kkt(det, spec):
    assert kkt_residual(det, spec) <= 1e-3


def test_running_best_lagrangian(det, spec):
    # history keeps |delta| only, so the merit is K + c/2 |delta|^2
    c = AugLagParams().c
    L = np.array([cons + 0.5 * c * dev**2 for _, dev, cons, _ in det.history])
    w = min(50, len(L))
    smooth = np.convolve(L, np.ones(w) / w, mode="valid")
    start = len(smooth) // 10
    best = np.minimum.accumulate(smooth[start:])
    assert np.all(np.diff(best) <= 0)
    assert L[-1] <= L[len(L) // 10]


def test_drift_target_gives_zero_control(spec):
    grid = TimeGrid(spec.t_i, spec.t_f, 128)
    drift = integrate(spec.x_i, np.zeros((128, 3)), grid, spec)[-1]
    s2 = spec.with_(x_f=drift[:6])
    sol = solve_deterministic(s2, n_steps=128)
    _assert_valid_hit(sol, s2)
    assert sol.u_star.norms().max() < 1e-6
    assert sol.consumption == pytest.approx(0.0, abs=1e-8)


def _brute_force(toy):
    """Exhaustive search over tangential burn / coast / burn node pairs."""
    n = toy.grid.n_steps
    best = None
    for a in range(n + 1):
        for b in range(a, n + 1):
            U = np.zeros((n, 3))
            U[:a, 1] = 1.0
            U[b:, 1] = 1.0
            xs = integrate(toy.spec.x_i, U, toy.grid, toy.spec)
            dev = np.linalg.norm(target_deviation(xs[-1], toy.spec))
            if best is None or dev < best[0]:
                best = (dev, 1.0 - xs[-1, 6], a, b)
    return best


def test_toy_matches_brute_force(toy):
    dev, cons, a, b = _brute_force(toy)
    assert dev < 1e-12 and (a, b) == (10, 22)
    sol = solve_deterministic(toy.spec, n_steps=toy.grid.n_steps)
    _assert_valid_hit(sol, toy.spec)
    assert sol.consumption == pytest.approx(cons, abs=1e-3)
    assert np.array_equal(sol.u_star.norms() > 0.5, toy.generator[:, 1] > 0.5)


@pytest.mark.slow
def test_gradient_method_reference(toy):
    """The plain projected-gradient method reaches the same optimum, slowly."""
    params = AugLagParams(method="gradient", max_iters=200_000, eps_u=0.05)
    sol = solve_deterministic(toy.spec, params, n_steps=toy.grid.n_steps)
    _assert_valid_hit(sol, toy.spec)
    lin = solve_deterministic(toy.spec, n_steps=toy.grid.n_steps)
    assert sol.consumption == pytest.approx(lin.consumption, abs=1e-6)


def test_gradient_method_mass_costate(toy, monkeypatch):
    seen = []
    real = ds.backward_sweep

    def spy(xs, U, grid, spec, lam_f, *a, **kw):
        seen.append(lam_f[6])
        return real(xs, U, grid, spec, lam_f, *a, **kw)

    monkeypatch.setattr(ds, "backward_sweep", spy)
    solve_deterministic(toy.spec, AugLagParams(method="gradient", max_iters=300, eps_u=0.05),
                        n_steps=toy.grid.n_steps)
    assert len(seen) == 300 and all(v == -1.0 for v in seen)


def test_transversality_costate():
    lam = transversality_costate(np.arange(6.0), np.ones(6), 10.0)
    np.testing.assert_array_equal(lam, [10, 11, 12, 13, 14, 15, -1])
    assert transversality_costate(np.zeros(6), np.zeros(6), 1.0, fuel=False)[6] == 0.0


def test_rejects_infeasible_start(spec):
    grid = TimeGrid(spec.t_i, spec.t_f, 16)
    with pytest.raises(ValueError):
        solve_deterministic(spec, u0=ControlTrajectory.constant(grid, [0, 2, 0]))


def test_diverged_is_a_value(spec):
    sol = solve_deterministic(spec, AugLagParams(max_iters=3), n_steps=64)
    assert sol.status is SolveStatus.DIVERGED
    assert sol.iterations == 3


def test_convergence_csv(tmp_path, det):
    path = tmp_path / "conv.csv"
    det.write_convergence_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "iteration,deviation,consumption," + ",".join(f"upsilon_{j}" for j in range(1, 7))
    assert len(lines) == det.iterations + 1


# --------------------------------------------------------------------------
# recourse


def _x_at(det, t):
    k = det.u_star.grid.snap(t)
    return det.x_star.states[k]


def test_recourse_early_failure_hits(det, spec):
    scen = FailureScenario(2.0, 0.1)
    sol = solve_recourse(_x_at(det, 2.0), scen, spec, v0=det.u_star, upsilon0=det.upsilon)
    _assert_valid_hit(sol, spec)
    k_p, k_r = sol.start_index, sol.free_index
    assert np.all(sol.u_star.values[:k_r] == 0.0)
    assert np.all(np.isnan(sol.x_star.states[:k_p]))
    assert sol.consumption >= det.consumption - 1e-9


def test_recourse_after_end_is_a_coast_miss(det, spec):
    scen = FailureScenario(8.0, 5.0)
    x_tp = _x_at(det, 8.0)
    sol = solve_recourse(x_tp, scen, spec, v0=det.u_star)
    assert sol.status is SolveStatus.MISSED and sol.iterations == 0
    grid = det.u_star.grid
    coast = integrate(x_tp, np.zeros((grid.n_steps, 3)), grid, spec, grid.snap(8.0))[-1]
    assert sol.deviation == pytest.approx(np.linalg.norm(target_deviation(coast, spec)), rel=1e-12)
    assert sol.consumption == pytest.approx(1.0 - x_tp[6], abs=1e-15)


def test_recourse_zero_duration(det, spec):
    for t in (1.5, 5.0, 7.6):
        sol = solve_recourse(_x_at(det, t), FailureScenario(t, 0.0), spec, v0=det.u_star, upsilon0=det.upsilon)
        _assert_valid_hit(sol, spec)
        assert sol.consumption <= det.consumption + 1e-3


def test_recourse_late_long_failure_misses(det, spec):
    sol = solve_recourse(_x_at(det, 7.5), FailureScenario(7.5, 0.3), spec, v0=det.u_star, upsilon0=det.upsilon)
    assert sol.status is SolveStatus.MISSED
    assert sol.deviation > 1e-3
    assert sol.u_star.norms().max() <= 1.0 + 1e-12


def test_recourse_requires_failure_before_end(det, spec):
    with pytest.raises(ValueError):
        solve_recourse(spec.x_i, FailureScenario(spec.t_f, 0.1), spec)


# --------------------------------------------------------------------------
# projection


def test_projection_of_member_is_identity(det, spec):
    p = project_control(det.u_star, spec)
    assert p.hit
    np.testing.assert_allclose(p.u_star.values, det.u_star.values, rtol=0, atol=1e-8)


@pytest.fixture(scope="module")
def perturbed(det):
    rng = np.random.default_rng(5)
    vals = det.u_star.values + 0.05 * rng.normal(size=det.u_star.values.shape)
    return ControlTrajectory(det.u_star.grid, vals)


def test_projection_of_perturbed_optimum(det, spec, perturbed):
    p = project_control(perturbed, spec, u_start=det.u_star, upsilon0=np.zeros(6))
    _assert_valid_hit(p, spec)
    h = det.u_star.grid.h

    def dist(u):
        return np.sqrt(h * np.sum((u - perturbed.values) ** 2))

    assert dist(p.u_star.values) <= dist(det.u_star.values)


def test_projection_idempotent(det, spec, perturbed):
    p1 = project_control(perturbed, spec, u_start=det.u_star)
    p2 = project_control(p1.u_star, spec)
    assert np.abs(p2.u_star.values - p1.u_star.values).max() <= 1e-6


def test_switch_times():
    g = TimeGrid(0.0, 1.0, 10)
    u = np.zeros((10, 3))
    u[:3, 0] = 1.0
    u[7:, 2] = 0.8
    np.testing.assert_allclose(switch_times(ControlTrajectory(g, u)), [0.3, 0.7])
