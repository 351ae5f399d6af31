"""Equinoctial-element satellite dynamics under low thrust.

State vectors are plain ``float64`` arrays of length 7 laid out as
``(p, ex, ey, hx, hy, l, m)``; controls are length-3 arrays ``(q, s, w)``
holding the radial, tangential and normal thrust fractions.  The jitted
kernels take the physical constants as scalars so they can be called from
other jitted code (the integrators in :mod:`robust_rendezvous.propagation`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np

from robust_rendezvous.failures import FailureLaw

STATE_DIM = 7
CONTROL_DIM = 3
ELEMENT_NAMES = ("p", "ex", "ey", "hx", "hy", "l")
STATE_NAMES = ELEMENT_NAMES + ("m",)
CONTROL_NAMES = ("q", "s", "w")


class DynamicsDomainError(ValueError):
    """Raised when a state leaves the domain where Gauss' equations hold."""


@dataclass(frozen=True)
class KeplerianElements:
    a: float
    e: float
    i: float
    omega: float
    raan: float
    true_anomaly: float


@dataclass(frozen=True)
class MissionSpec:
    """Physical constants, boundary data and failure model of a mission.

    Times and masses are in the scaled units of the mission data; ``x_i`` is
    the full 7-vector initial state and ``x_f`` the 6 target elements.
    """

    thrust: float
    g0isp: float
    nu: float
    t_i: float
    t_f: float
    x_i: np.ndarray
    x_f: np.ndarray
    failure_law: FailureLaw = field(default_factory=FailureLaw)
    p: float = 0.95

    def __post_init__(self):
        object.__setattr__(self, "x_i", np.asarray(self.x_i, dtype=float).copy())
        object.__setattr__(self, "x_f", np.asarray(self.x_f, dtype=float).copy())
        if self.x_i.shape != (STATE_DIM,) or self.x_f.shape != (STATE_DIM - 1,):
            raise ValueError("x_i must have 7 components and x_f 6")
        if not self.t_i < self.t_f:
            raise ValueError(f"t_i={self.t_i} must precede t_f={self.t_f}")
        if not 0.0 < self.p < 1.0:
            raise ValueError(f"probability level p={self.p} outside (0, 1)")
        if self.thrust <= 0 or self.g0isp <= 0 or self.nu <= 0:
            raise ValueError("thrust, g0isp and nu must be positive")

    @property
    def mass_rate(self) -> float:
        """Mass flow at full thrust, ``-T / (g0 Isp)``."""
        return -self.thrust / self.g0isp

    def with_(self, **changes) -> "MissionSpec":
        values = {
            "thrust": self.thrust, "g0isp": self.g0isp, "nu": self.nu,
            "t_i": self.t_i, "t_f": self.t_f, "x_i": self.x_i, "x_f": self.x_f,
            "failure_law": self.failure_law, "p": self.p,
        }
        values.update(changes)
        return MissionSpec(**values)


def reference_mission(p: float = 0.95) -> MissionSpec:
    """The scaled interplanetary rendezvous used as the reference case."""
    return MissionSpec(
        thrust=0.0336750,
        g0isp=0.4936891,
        nu=1.0,
        t_i=0.6888699,
        t_f=8.7830909,
        x_i=np.array([0.999702, -0.003359, 0.016942, -0.000011, 0.000007, 36.52939, 1.0]),
        x_f=np.array([1.511514, 0.085367, -0.037923, 0.010474, 0.012275, 42.17610]),
        failure_law=FailureLaw(t_p_min=0.68887, scale_p=15.1711, t_d_min=0.03444, scale_d=0.05350),
        p=p,
    )


# --------------------------------------------------------------------------
# jitted kernels


@numba.njit(cache=True)
def _rhs(x, u, nu, thrust, g0isp, out):
    p, ex, ey, hx, hy, lon, m = x[0], x[1], x[2], x[3], x[4], x[5], x[6]
    q, s, w = u[0], u[1], u[2]
    cl = math.cos(lon)
    sl = math.sin(lon)
    z = 1.0 + ex * cl + ey * sl
    a = ex + (1.0 + z) * cl
    b = ey + (1.0 + z) * sl
    f = hx * sl - hy * cl
    xx = 1.0 + hx * hx + hy * hy
    ka = math.sqrt(p / nu) * thrust / (m * z)
    out[0] = ka * 2.0 * p * s
    out[1] = ka * (z * sl * q + a * s - ey * f * w)
    out[2] = ka * (-z * cl * q + b * s + ex * f * w)
    out[3] = ka * 0.5 * xx * cl * w
    out[4] = ka * 0.5 * xx * sl * w
    out[5] = math.sqrt(nu / (p * p * p)) * z * z + ka * f * w
    out[6] = -thrust / g0isp * math.sqrt(q * q + s * s + w * w)


@numba.njit(cache=True)
def _jac_x(x, u, nu, thrust, g0isp, jx):
    """Jacobian of the rates w.r.t. the state, written into ``jx`` (7x7)."""
    p, ex, ey, hx, hy, lon, m = x[0], x[1], x[2], x[3], x[4], x[5], x[6]
    q, s, w = u[0], u[1], u[2]
    cl = math.cos(lon)
    sl = math.sin(lon)
    z = 1.0 + ex * cl + ey * sl
    z_l = -ex * sl + ey * cl
    a = ex + (1.0 + z) * cl
    b = ey + (1.0 + z) * sl
    f = hx * sl - hy * cl
    f_l = hx * cl + hy * sl
    xx = 1.0 + hx * hx + hy * hy
    ka = math.sqrt(p / nu) * thrust / (m * z)

    for i in range(7):
        for j in range(7):
            jx[i, j] = 0.0

    # control-driven parts are ka * g_i(x, u)
    g0 = 2.0 * p * s
    g1 = z * sl * q + a * s - ey * f * w
    g2 = -z * cl * q + b * s + ex * f * w
    g3 = 0.5 * xx * cl * w
    g4 = 0.5 * xx * sl * w
    g5 = f * w
    # d ln(ka) / dx
    dk0 = 0.5 / p
    dk1 = -cl / z
    dk2 = -sl / z
    dk5 = -z_l / z
    dk6 = -1.0 / m

    gs = (g0, g1, g2, g3, g4, g5)
    for i in range(6):
        gi = gs[i]
        jx[i, 0] += ka * gi * dk0
        jx[i, 1] += ka * gi * dk1
        jx[i, 2] += ka * gi * dk2
        jx[i, 5] += ka * gi * dk5
        jx[i, 6] += ka * gi * dk6

    jx[0, 0] += ka * 2.0 * s

    a_ex = 1.0 + cl * cl
    a_ey = sl * cl
    a_l = z_l * cl - (1.0 + z) * sl
    jx[1, 1] += ka * (cl * sl * q + a_ex * s)
    jx[1, 2] += ka * (sl * sl * q + a_ey * s - f * w)
    jx[1, 3] += ka * (-ey * sl * w)
    jx[1, 4] += ka * (ey * cl * w)
    jx[1, 5] += ka * (z_l * sl * q + z * cl * q + a_l * s - ey * f_l * w)

    b_ex = cl * sl
    b_ey = 1.0 + sl * sl
    b_l = z_l * sl + (1.0 + z) * cl
    jx[2, 1] += ka * (-cl * cl * q + b_ex * s + f * w)
    jx[2, 2] += ka * (-sl * cl * q + b_ey * s)
    jx[2, 3] += ka * (ex * sl * w)
    jx[2, 4] += ka * (-ex * cl * w)
    jx[2, 5] += ka * (-z_l * cl * q + z * sl * q + b_l * s + ex * f_l * w)

    jx[3, 3] += ka * hx * cl * w
    jx[3, 4] += ka * hy * cl * w
    jx[3, 5] += ka * (-0.5 * xx * sl * w)

    jx[4, 3] += ka * hx * sl * w
    jx[4, 4] += ka * hy * sl * w
    jx[4, 5] += ka * 0.5 * xx * cl * w

    jx[5, 3] += ka * sl * w
    jx[5, 4] += ka * (-cl * w)
    jx[5, 5] += ka * f_l * w

    n = math.sqrt(nu / (p * p * p))
    jx[5, 0] += -1.5 * n * z * z / p
    jx[5, 1] += 2.0 * n * z * cl
    jx[5, 2] += 2.0 * n * z * sl
    jx[5, 5] += 2.0 * n * z * z_l


@numba.njit(cache=True)
def _jac_u_elements(x, nu, thrust, ju):
    """Control Jacobian of the six element rates (rows 0..5 of df/du)."""
    p, ex, ey, hx, hy, lon, m = x[0], x[1], x[2], x[3], x[4], x[5], x[6]
    cl = math.cos(lon)
    sl = math.sin(lon)
    z = 1.0 + ex * cl + ey * sl
    a = ex + (1.0 + z) * cl
    b = ey + (1.0 + z) * sl
    f = hx * sl - hy * cl
    xx = 1.0 + hx * hx + hy * hy
    ka = math.sqrt(p / nu) * thrust / (m * z)
    ju[0, 0] = 0.0
    ju[0, 1] = 2.0 * ka * p
    ju[0, 2] = 0.0
    ju[1, 0] = ka * z * sl
    ju[1, 1] = ka * a
    ju[1, 2] = -ka * ey * f
    ju[2, 0] = -ka * z * cl
    ju[2, 1] = ka * b
    ju[2, 2] = ka * ex * f
    ju[3, 0] = 0.0
    ju[3, 1] = 0.0
    ju[3, 2] = 0.5 * ka * xx * cl
    ju[4, 0] = 0.0
    ju[4, 1] = 0.0
    ju[4, 2] = 0.5 * ka * xx * sl
    ju[5, 0] = 0.0
    ju[5, 1] = 0.0
    ju[5, 2] = ka * f


# --------------------------------------------------------------------------
# public API


def _check_state(x: np.ndarray) -> None:
    if x[0] <= 0 or x[6] <= 0:
        raise DynamicsDomainError(f"non-physical state p={x[0]}, m={x[6]}")
    z = 1.0 + x[1] * math.cos(x[5]) + x[2] * math.sin(x[5])
    if z <= 0:
        raise DynamicsDomainError(f"Z={z} <= 0 at state {x}")


def gauss_rhs(x, u, spec: MissionSpec) -> np.ndarray:
    """Time derivative of ``(p, ex, ey, hx, hy, l, m)`` under control ``u``."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if np.linalg.norm(u) > 1.0 + 1e-12:
        raise ValueError(f"control norm {np.linalg.norm(u)} exceeds 1")
    _check_state(x)
    out = np.empty(STATE_DIM)
    _rhs(x, u, spec.nu, spec.thrust, spec.g0isp, out)
    if not np.all(np.isfinite(out)):
        raise DynamicsDomainError(f"non-finite rates at state {x}")
    return out


def dfdu(x, u, spec: MissionSpec) -> np.ndarray:
    """7x3 control Jacobian.

    The mass row is ``gamma * u / |u|``; at ``u = 0`` it is set to zero,
    which is one element of the subdifferential of the thrust magnitude.
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    _check_state(x)
    ju = np.zeros((STATE_DIM, CONTROL_DIM))
    _jac_u_elements(x, spec.nu, spec.thrust, ju)
    norm = np.linalg.norm(u)
    if norm > 0:
        ju[6] = spec.mass_rate * u / norm
    return ju


def dfdx(x, u, spec: MissionSpec) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    _check_state(x)
    jx = np.empty((STATE_DIM, STATE_DIM))
    _jac_x(x, u, spec.nu, spec.thrust, spec.g0isp, jx)
    return jx


def hamiltonian(x, u, lam, spec: MissionSpec) -> float:
    return float(np.dot(lam, gauss_rhs(x, u, spec)))


def keplerian_to_equinoctial(k: KeplerianElements) -> np.ndarray:
    if not k.a > 0 or k.e < 0:
        raise ValueError("need a > 0 and e >= 0")
    if abs(math.cos(k.i / 2.0)) < 1e-12:
        raise ValueError("inclination of pi is singular for equinoctial elements")
    lon_peri = k.omega + k.raan
    t = math.tan(k.i / 2.0)
    return np.array([
        k.a * abs(1.0 - k.e * k.e),
        k.e * math.cos(lon_peri),
        k.e * math.sin(lon_peri),
        t * math.cos(k.raan),
        t * math.sin(k.raan),
        lon_peri + k.true_anomaly,
    ])


def equinoctial_to_keplerian(elements) -> KeplerianElements:
    """Inverse of :func:`keplerian_to_equinoctial` for elliptic orbits.

    Angles come back in ``[0, 2*pi)`` except the true anomaly, which keeps
    whatever winding the longitude carried.
    """
    p, ex, ey, hx, hy, lon = (float(v) for v in elements)
    e = math.hypot(ex, ey)
    a = p / abs(1.0 - e * e)
    i = 2.0 * math.atan(math.hypot(hx, hy))
    raan = math.atan2(hy, hx) % (2 * math.pi)
    lon_peri = math.atan2(ey, ex)
    omega = (lon_peri - raan) % (2 * math.pi)
    return KeplerianElements(a, e, i, omega, raan, lon - omega - raan)


def target_deviation(x, spec: MissionSpec) -> np.ndarray:
    """Rendezvous residual: first six state components minus the target."""
    return np.asarray(x, dtype=float)[:6] - spec.x_f


def consumption(x_final, spec: MissionSpec) -> float:
    """Fuel used, ``m(t_i) - m(t_f)``."""
    return float(spec.x_i[6] - x_final[6])
