"""Earth-Moon circular restricted three-body dynamics with low thrust.

Positions and velocities are nondimensional (DU, DU/TU) in the rotating
synodic frame; mass stays in kilograms and thrust in newtons. The 7-state
``(q, v, m)`` is propagated with an adaptive Dormand-Prince 5(4) pair that
restarts at every control-segment boundary, so a thrust discontinuity never
falls inside a step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

G_SI = 6.67430e-11
EARTH_MOON_GM = 4.0350323e14  # m^3/s^2, GM_earth + GM_moon
SINGULAR_RADIUS = 1e-6


class PropagationError(RuntimeError):
    """Propagation hit a primary, underflowed its step size or ran too long."""


@dataclass(frozen=True)
class SystemConstants:
    mu: float = 0.01215
    isp_s: float = 1000.0
    g0: float = 9.80665
    t_max_N: float = 1.0
    du_km: float = 384400.0
    tu_s: float = 375190.0
    m0_kg: float = 1000.0

    def __post_init__(self):
        if not 0.0 < self.mu < 0.5:
            raise ValueError("mu must lie in (0, 0.5)")
        if self.isp_s <= 0 or self.t_max_N < 0 or self.tu_s <= 0 or self.du_km <= 0:
            raise ValueError("isp_s, tu_s, du_km must be positive and t_max_N non-negative")

    @property
    def accel_scale(self) -> float:
        """Multiply N/kg by this to get DU/TU^2."""
        return self.tu_s**2 / (self.du_km * 1e3)

    @property
    def mdot_scale(self) -> float:
        """Mass-flow magnitude in kg/TU for 1 N of thrust."""
        return self.tu_s / (self.isp_s * self.g0)


def time_unit_s(du_km: float = 384400.0, gm: float = EARTH_MOON_GM) -> float:
    """TU that makes the mean motion one: sqrt(DU^3 / GM)."""
    return math.sqrt((du_km * 1e3) ** 3 / gm)


def distances(q, mu):
    q = np.asarray(q, dtype=float)
    r1 = math.sqrt((q[0] + mu) ** 2 + q[1] ** 2 + q[2] ** 2)
    r2 = math.sqrt((q[0] - (1.0 - mu)) ** 2 + q[1] ** 2 + q[2] ** 2)
    return r1, r2


def effective_potential(q, mu) -> float:
    r1, r2 = distances(q, mu)
    if mu == 0.0:
        # two-body limit: the secondary carries no mass
        if r1 == 0.0:
            raise ValueError("effective potential is singular at a primary")
        return 0.5 * (q[0] ** 2 + q[1] ** 2) + 1.0 / r1
    if r1 == 0.0 or r2 == 0.0:
        raise ValueError("effective potential is singular at a primary")
    return 0.5 * (q[0] ** 2 + q[1] ** 2) + (1.0 - mu) / r1 + mu / r2


def potential_gradient(q, mu) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    r1, r2 = distances(q, mu)
    if r1 == 0.0 or r2 == 0.0:
        raise ValueError("effective potential is singular at a primary")
    a, b = (1.0 - mu) / r1**3, mu / r2**3
    return np.array([
        q[0] - a * (q[0] + mu) - b * (q[0] - 1.0 + mu),
        q[1] - a * q[1] - b * q[1],
        -a * q[2] - b * q[2],
    ])


def jacobi_constant(state, constants: SystemConstants) -> float:
    state = np.asarray(state, dtype=float)
    return 2.0 * effective_potential(state[:3], constants.mu) - float(state[3:6] @ state[3:6])


def natural_field(state, constants: SystemConstants) -> np.ndarray:
    state = np.asarray(state, dtype=float)
    v = state[3:6]
    g = potential_gradient(state[:3], constants.mu)
    acc = g + np.array([2.0 * v[1], -2.0 * v[0], 0.0])
    out = np.zeros(state.size)
    out[:3] = v
    out[3:6] = acc
    return out


def controlled_field(state, u, alpha, constants: SystemConstants) -> np.ndarray:
    """Natural field plus thrust acceleration and mass flow (mass rate in kg/TU)."""
    state = np.asarray(state, dtype=float)
    u = np.asarray(u, dtype=float)
    m = state[6]
    if not m > 0:
        raise ValueError("mass must be positive")
    out = natural_field(state, constants)
    out[3:6] += alpha * u / m * constants.accel_scale
    out[6] = -alpha * float(np.linalg.norm(u)) * constants.mdot_scale
    return out


def mass_flow_kg_per_s(u, alpha, constants: SystemConstants) -> float:
    return -alpha * float(np.linalg.norm(u)) / (constants.isp_s * constants.g0)


def l1_position(mu: float, tol: float = 1e-14) -> float:
    """x-coordinate of L1 by bisection on dU/dx over (-mu, 1-mu)."""
    if not 0.0 < mu < 0.5:
        raise ValueError("mu must lie in (0, 0.5)")

    def dudx(x):
        r1, r2 = x + mu, 1.0 - mu - x
        return x - (1.0 - mu) / r1**2 + mu / r2**2

    # dU/dx runs from -inf at the primary to +inf at the secondary
    lo, hi = -mu + 1e-15, 1.0 - mu - 1e-15
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if dudx(mid) < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = np.array([
    [0, 0, 0, 0, 0, 0],
    [1 / 5, 0, 0, 0, 0, 0],
    [3 / 40, 9 / 40, 0, 0, 0, 0],
    [44 / 45, -56 / 15, 32 / 9, 0, 0, 0],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729, 0, 0],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656, 0],
    [35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
])
_B = np.array([35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0])
_E = _B - np.array([5179 / 57600, 0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])


@numba.njit(cache=True)
def _rhs(y, mu, acc, mdot, out):
    x, yy, z = y[0], y[1], y[2]
    dx1 = x + mu
    dx2 = x - 1.0 + mu
    r1sq = dx1 * dx1 + yy * yy + z * z
    r2sq = dx2 * dx2 + yy * yy + z * z
    r1 = math.sqrt(r1sq)
    r2 = math.sqrt(r2sq)
    if r1 < SINGULAR_RADIUS or r2 < SINGULAR_RADIUS:
        return False
    a = (1.0 - mu) / (r1sq * r1)
    b = mu / (r2sq * r2)
    inv_m = 1.0 / y[6]
    out[0] = y[3]
    out[1] = y[4]
    out[2] = y[5]
    out[3] = x - a * dx1 - b * dx2 + 2.0 * y[4] + acc[0] * inv_m
    out[4] = yy - a * yy - b * yy - 2.0 * y[3] + acc[1] * inv_m
    out[5] = -a * z - b * z + acc[2] * inv_m
    out[6] = mdot
    return True


@numba.njit(cache=True)
def _segment(y0, duration, mu, acc, mdot, rtol, atol, max_steps, C, A, B, E):
    """Integrate one constant-control segment; ``duration`` may be negative.

    Returns (state, status, fractions): status 0 ok, 1 singularity, 2 step
    underflow, 3 step budget exhausted, 4 non-positive mass; fractions are
    the accepted step sizes divided by ``|duration|``.
    """
    n = 7
    y = y0.copy()
    hist = np.empty(64)
    nh = 0
    if duration == 0.0:
        return y, 0, hist[:0]
    direction = 1.0 if duration > 0 else -1.0
    T = abs(duration)
    k = np.zeros((7, n))
    ytmp = np.zeros(n)
    if not _rhs(y, mu, acc, mdot, k[0]):
        return y, 1, hist[:0]
    # initial step from the derivative scale (Hairer's heuristic, first stage)
    d0 = 0.0
    d1 = 0.0
    for i in range(n):
        sc = atol + rtol * abs(y[i])
        d0 += (y[i] / sc) ** 2
        d1 += (k[0, i] / sc) ** 2
    d0 = math.sqrt(d0 / n)
    d1 = math.sqrt(d1 / n)
    h = 1e-6 if (d0 < 1e-5 or d1 < 1e-5) else 0.01 * d0 / d1
    h = min(h, T)
    t = 0.0
    steps = 0
    while t < T:
        if steps >= max_steps:
            return y, 3, hist[:nh]
        if h < 1e-14 * max(1.0, T):
            return y, 2, hist[:nh]
        last = False
        if t + h >= T:
            h = T - t
            last = True
        hs = direction * h
        ok = True
        for s in range(1, 7):
            for i in range(n):
                acc_i = 0.0
                for j in range(s):
                    acc_i += A[s, j] * k[j, i]
                ytmp[i] = y[i] + hs * acc_i
            if not _rhs(ytmp, mu, acc, mdot, k[s]):
                ok = False
                break
        if not ok:
            h *= 0.25
            steps += 1
            continue
        err = 0.0
        for i in range(n):
            yn = y[i]
            s5 = 0.0
            e = 0.0
            for j in range(7):
                s5 += B[j] * k[j, i]
                e += E[j] * k[j, i]
            ytmp[i] = yn + hs * s5
            sc = atol + rtol * max(abs(yn), abs(ytmp[i]))
            err += (hs * e / sc) ** 2
        err = math.sqrt(err / n)
        steps += 1
        if err <= 1.0:
            t = T if last else t + h
            for i in range(n):
                y[i] = ytmp[i]
            if nh == hist.size:
                grown = np.empty(2 * nh)
                grown[:nh] = hist
                hist = grown
            hist[nh] = h / T
            nh += 1
            if y[6] <= 0.0:
                return y, 4, hist[:nh]
            # FSAL: last stage is the derivative at the new point
            for i in range(n):
                k[0, i] = k[6, i]
            fac = 5.0 if err == 0.0 else min(5.0, 0.9 * err ** -0.2)
            h *= fac
        else:
            h *= max(0.2, 0.9 * err ** -0.2)
    return y, 0, hist[:nh]


@numba.njit(cache=True)
def _replay(y0, duration, fracs, mu, acc, mdot, A, B):
    """Fixed-step DP5 pass over ``duration`` with steps ``fracs * duration``.

    Used for finite differences: reusing a nominal step sequence keeps the
    perturbed map smooth in its inputs. Returns (state, status).
    """
    n = 7
    y = y0.copy()
    k = np.zeros((7, n))
    ytmp = np.zeros(n)
    for f in fracs:
        hs = f * duration
        if not _rhs(y, mu, acc, mdot, k[0]):
            return y, 1
        for s in range(1, 7):
            for i in range(n):
                acc_i = 0.0
                for j in range(s):
                    acc_i += A[s, j] * k[j, i]
                ytmp[i] = y[i] + hs * acc_i
            if not _rhs(ytmp, mu, acc, mdot, k[s]):
                return y, 1
        for i in range(n):
            s5 = 0.0
            for j in range(7):
                s5 += B[j] * k[j, i]
            y[i] = y[i] + hs * s5
        if y[6] <= 0.0:
            return y, 4
    return y, 0


_STATUS = {
    1: "trajectory entered the singularity radius of a primary",
    2: "step size underflow",
    3: "step budget exhausted",
    4: "mass became non-positive",
}


def _segment_inputs(state, u, alpha, constants):
    y0 = np.asarray(state, dtype=float)
    if y0.shape != (7,):
        raise ValueError("state must be a 7-vector (q, v, m)")
    u = np.asarray(u, dtype=float)
    acc = alpha * u * constants.accel_scale
    mdot = -alpha * float(np.linalg.norm(u)) * constants.mdot_scale
    return y0, acc, mdot


def propagate_segment(state, duration, u, alpha, constants: SystemConstants,
                      rtol=1e-12, atol=1e-12, max_steps=200000, return_steps=False):
    """Propagate a 7-state through one constant-thrust segment.

    A negative ``duration`` integrates backward in time, in which case a
    thrusting segment increases the mass. With ``return_steps`` the accepted
    step sizes (as fractions of ``|duration|``) are returned too, for use with
    :func:`replay_segment`.
    """
    if not (rtol > 0 and atol > 0):
        raise ValueError("tolerances must be positive")
    y0, acc, mdot = _segment_inputs(state, u, alpha, constants)
    y, status, fracs = _segment(y0, float(duration), constants.mu, acc, mdot, rtol, atol,
                                max_steps, _C, _A, _B, _E)
    if status:
        raise PropagationError(_STATUS[status])
    return (y, fracs) if return_steps else y


def replay_segment(state, duration, u, alpha, constants: SystemConstants, fracs) -> np.ndarray:
    """Fixed-step propagation reusing the step fractions of a nominal run.

    An empty ``fracs`` with nonzero ``duration`` takes a single step.
    """
    y0, acc, mdot = _segment_inputs(state, u, alpha, constants)
    fracs = np.asarray(fracs, dtype=float)
    if fracs.size == 0:
        if duration == 0.0:
            return y0.copy()
        fracs = np.ones(1)
    y, status = _replay(y0, float(duration), fracs, constants.mu, acc, mdot, _A, _B)
    if status:
        raise PropagationError(_STATUS[status])
    return y


def propagate(state, schedule, alpha, constants: SystemConstants,
              rtol=1e-12, atol=1e-12, backward=False) -> np.ndarray:
    """Propagate through a piecewise-constant schedule of ``(u, duration)`` pairs.

    Durations must be non-negative; ``backward=True`` runs every segment
    backward in time, in the order given.
    """
    y = np.asarray(state, dtype=float).copy()
    sign = -1.0 if backward else 1.0
    for u, dt in schedule:
        if dt < 0:
            raise ValueError("segment durations must be non-negative")
        y = propagate_segment(y, sign * dt, u, alpha, constants, rtol, atol)
    return y


def ballistic(state6, duration, constants: SystemConstants, mass=None, rtol=1e-12, atol=1e-12):
    """Natural-flow propagation of a 6-state (mass carried along unchanged)."""
    s = np.empty(7)
    s[:6] = state6
    s[6] = constants.m0_kg if mass is None else mass
    return propagate_segment(s, duration, np.zeros(3), 0.0, constants, rtol, atol)
