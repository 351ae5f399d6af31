import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from robust_rendezvous.smoothing import (
    Schedules,
    heaviside_smooth,
    indicator,
    indicator_smooth,
    smoothing_radius,
    step_length,
)

radii = st.floats(1e-6, 10.0)


def test_indicator():
    assert indicator(0.0) == 1.0
    assert indicator(0.5) == 0.0
    assert indicator(1e-300) == 0.0
    with pytest.raises(ValueError):
        indicator(-1e-12)


def test_indicator_smooth_points():
    r = 0.3
    assert indicator_smooth(r / 2, r) == pytest.approx(0.5)
    assert indicator_smooth(r, r) == 0.0
    assert indicator_smooth(0.0, r) == 1.0
    with pytest.raises(ValueError):
        indicator_smooth(0.1, 0.0)


def test_indicator_smooth_limit():
    y = 1e-5
    vals = [indicator_smooth(y, r) for r in (1e-1, 1e-3, 1e-6)]
    assert vals == sorted(vals, reverse=True)
    assert vals[-1] == indicator(y)


def test_heaviside_points():
    r = 0.8
    assert heaviside_smooth(0.0, r) == 1.0
    assert heaviside_smooth(-r / 4, r) == pytest.approx(0.75)
    assert heaviside_smooth(-r, r) == 0.0
    assert heaviside_smooth(-5.0, r) == 0.0
    assert heaviside_smooth(3.0, r) == 1.0


def test_indicator_heaviside_identity_grid():
    r = 0.37
    y = np.linspace(0.0, 2 * r, 100)
    assert np.array_equal(indicator_smooth(y, r), heaviside_smooth(-y, r))


@given(y1=st.floats(0, 100), y2=st.floats(0, 100), r=radii)
def test_indicator_smooth_monotone_lipschitz(y1, y2, r):
    a, b = indicator_smooth(y1, r), indicator_smooth(y2, r)
    assert 0.0 <= a <= 1.0
    if y1 <= y2:
        assert a >= b
    assert abs(a - b) <= abs(y1 - y2) / r * (1 + 1e-12) + 1e-15


@given(y1=st.floats(0, 10), y2=st.floats(0, 10), t=st.floats(0, 1), r=radii)
def test_indicator_smooth_convex(y1, y2, t, r):
    mid = indicator_smooth(t * y1 + (1 - t) * y2, r)
    assert mid <= t * indicator_smooth(y1, r) + (1 - t) * indicator_smooth(y2, r) + 1e-12


def test_step_length():
    assert step_length(0, 0.5, 100.0) == 0.005
    beta = 100.0
    k = np.array([1e3, 1e5, 1e7])
    ratio = step_length(0, 1.0, beta + k[0]) / step_length(0, 1.0, 2 * k[0] + 2 * beta)
    assert ratio <= 2.0 + 1e-12
    with pytest.raises(ValueError):
        step_length(-1, 1.0, 1.0)


def test_step_sums():
    k = np.arange(0, 1_000_001, dtype=float)
    s = 1.0 / (100.0 + k)
    partial = np.cumsum(s)
    # harmonic growth: each decade adds about ln(10)
    assert partial[-1] - partial[99_999] == pytest.approx(np.log(10), rel=1e-3)
    sq = np.cumsum(s * s)
    assert sq[-1] - sq[99_999] < 1e-5
    assert sq[-1] < 1.0 / 99.0


def test_radius():
    a, b = 0.1, 1e-6
    assert smoothing_radius(1000, a, b) / smoothing_radius(1, a, b) == pytest.approx(0.1, rel=1e-4)
    assert smoothing_radius(10**6, a, b) / smoothing_radius(1, a, b) == pytest.approx(0.01, rel=1e-4)
    assert smoothing_radius(0, 0.1, 1.0) == 0.1
    r = [smoothing_radius(k, 0.1, 1.0) for k in range(0, 5000, 7)]
    assert all(x > y for x, y in zip(r, r[1:]))
    assert smoothing_radius(10**12, 0.1, 1.0) < 1e-5


def test_schedules():
    s = Schedules()
    assert s.eps_u(0) == pytest.approx(0.05 / 100)
    assert s.eps_mu(10) == pytest.approx(5.0 / 110)
    assert s.radius(0) == pytest.approx(0.1)
    assert Schedules(alpha_u=0.0).eps_u(3) == 0.0
    with pytest.raises(ValueError):
        Schedules(a_r=0.0)
    with pytest.raises(ValueError):
        Schedules(alpha_mu=-1.0)
    assert Schedules(**s.to_dict()) == s
