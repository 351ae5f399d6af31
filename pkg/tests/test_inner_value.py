import numpy as np
import pytest

from robust_rendezvous.det_solver import AugLagParams, solve_recourse
from robust_rendezvous.failures import FailureScenario
from robust_rendezvous.inner_value import InnerStatus, eval_W
from robust_rendezvous.propagation import ControlTrajectory, integrate
from robust_rendezvous.smoothing import indicator_smooth

# tight solves so that differences of optimal values are meaningful; the toy
# mission has little control authority and wants a much larger dual step
TIGHT_TOY = AugLagParams(tol_target=1e-10, tol_stall=1e-12, tol_value=1e-12, max_iters=20000, dual_step=1e5)


def _check_invariants(w):
    assert w.value <= 0.0
    assert -1.0 <= w.grad_mu <= 0.0
    if w.status is InnerStatus.DO_NOTHING:
        assert w.value == 0.0 and w.grad_mu == 0.0 and np.all(w.grad_x == 0.0)
    if w.status is InnerStatus.HIT_EXACT:
        assert w.grad_mu == -1.0


def _on_det(det, t):
    k = det.u_star.grid.snap(t)
    return det.x_star.states[k], det.u_star.grid.time(k)


def test_coast_beyond_horizon_far_miss(det, spec):
    x, t = _on_det(det, 8.0)
    w = eval_W(x, FailureScenario(t, 5.0), 1.0, 1e-3, spec, v0=det.u_star)
    assert w.status is InnerStatus.DO_NOTHING
    assert w.recourse.deviation > 1e-3
    _check_invariants(w)


def test_zero_multiplier_does_nothing(det, spec):
    x, t = _on_det(det, 2.0)
    w = eval_W(x, FailureScenario(t, 0.1), 0.0, 0.1, spec, v0=det.u_star, upsilon0=det.upsilon)
    assert w.recourse.hit
    assert w.status is InnerStatus.DO_NOTHING
    _check_invariants(w)


def test_tie_is_do_nothing(det, spec):
    x, t = _on_det(det, 2.0)
    scen = FailureScenario(t, 0.1)
    rec = solve_recourse(x, scen, spec, v0=det.u_star, upsilon0=det.upsilon)
    w = eval_W(x, scen, rec.consumption, 0.1, spec, v0=det.u_star, upsilon0=det.upsilon)
    assert w.status is InnerStatus.DO_NOTHING


def test_hit_exact(det, spec):
    x, t = _on_det(det, 2.0)
    w = eval_W(x, FailureScenario(t, 0.1), 0.5, 0.1, spec, v0=det.u_star, upsilon0=det.upsilon)
    assert w.status is InnerStatus.HIT_EXACT
    assert w.value == pytest.approx(w.recourse.consumption - 0.5)
    _check_invariants(w)


def test_near_miss_and_far_miss(det, spec):
    x, t = _on_det(det, 7.3)
    scen = FailureScenario(t, 0.05)
    near = eval_W(x, scen, 0.5, 0.01, spec, v0=det.u_star, upsilon0=det.upsilon)
    assert near.status is InnerStatus.NEAR_MISS
    dev = near.recourse.deviation
    assert 1e-5 < dev < 0.01
    weight = indicator_smooth(dev, 0.01)
    assert near.value == pytest.approx((near.recourse.consumption - 0.5) * weight)
    assert near.grad_mu == pytest.approx(-weight)
    _check_invariants(near)
    far = eval_W(x, scen, 0.5, 0.5 * dev, spec, v0=det.u_star, upsilon0=det.upsilon)
    assert far.status is InnerStatus.DO_NOTHING


def test_argument_checks(det, spec):
    with pytest.raises(ValueError):
        eval_W(spec.x_i, FailureScenario(2.0, 0.1), -1.0, 0.1, spec)
    with pytest.raises(ValueError):
        eval_W(spec.x_i, FailureScenario(2.0, 0.1), 1.0, 0.0, spec)


def _central(f, x, eps):
    g = np.empty(7)
    for j in range(7):
        e = np.zeros(7)
        e[j] = eps
        g[j] = (f(x + e) - f(x - e)) / (2 * eps)
    return g


def test_hit_exact_gradient_matches_resolve(toy):
    """grad_x of the HitExact branch against differences of re-solved optimal values."""
    grid = toy.grid
    xs = integrate(toy.spec.x_i, toy.generator, grid, toy.spec)
    k = 4
    scen = FailureScenario(grid.time(k), 2 * grid.h)
    w = eval_W(xs[k], scen, 1.0, 0.05, toy.spec, TIGHT_TOY, v0=ControlTrajectory(grid, toy.generator))
    assert w.status is InnerStatus.HIT_EXACT
    rec = w.recourse

    def value(x):
        s = solve_recourse(x, scen, toy.spec, TIGHT_TOY, v0=rec.u_star, upsilon0=rec.upsilon)
        assert s.hit
        return s.consumption - 1.0

    fd = _central(value, xs[k], 1e-6)
    assert np.linalg.norm(w.grad_x - fd) <= 5e-3 * np.linalg.norm(fd)
    big = np.abs(fd) > 1e-3 * np.abs(fd).max()
    np.testing.assert_allclose(w.grad_x[big], fd[big], rtol=5e-3)


def test_near_miss_gradient_matches_resolve(det, spec):
    """The chain-rule NearMiss costate against differences of (K - mu) I_r(|delta|)."""
    x, t = _on_det(det, 7.3)
    scen = FailureScenario(t, 0.05)
    mu, r = 0.5, 0.01
    w = eval_W(x, scen, mu, r, spec, v0=det.u_star, upsilon0=det.upsilon)
    assert w.status is InnerStatus.NEAR_MISS
    rec = w.recourse

    def value(y):
        s = solve_recourse(y, scen, spec, v0=rec.u_star, upsilon0=rec.upsilon)
        return (s.consumption - mu) * indicator_smooth(s.deviation, r)

    fd = _central(value, x, 1e-6)
    assert np.linalg.norm(w.grad_x - fd) <= 1e-2 * np.linalg.norm(fd)
