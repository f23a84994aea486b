"""Rebuild the CR3BP departure and arrival states shipped in amorgs.config.

Departure: start at GTO perigee (6578 x 42164 km, Earth-centred) and thrust
for 30 days at the full 1 N along the inertial velocity direction. The
position and velocity at the end of the spiral become ``CR3BP_XI0``; the
mass is reset to the configured wet mass when the transfer starts.

Arrival: from that departure state, fly a reference schedule (30 TU of
shooting with controls at azimuth 2 pi j / 20 and half throttle, 2 TU coast
on either side) and keep the final 6-state as ``CR3BP_XIF``.

Run with ``python3 demos/boundary_conditions.py``; it prints both states next
to the shipped constants.
"""

import numpy as np

from amorgs.config import CR3BP_XI0, CR3BP_XIF
from amorgs.cr3bp import SystemConstants, jacobi_constant, propagate_segment
from amorgs.shooting import BoundaryConditions, ShootingTranscription, controls_to_cartesian


def gto_spiral(c: SystemConstants, days=30.0, steps=3000, perigee_km=6578.0, apogee_km=42164.0):
    mu = c.mu
    rp, ra = perigee_km / c.du_km, apogee_km / c.du_km
    a = 0.5 * (rp + ra)
    vp = np.sqrt((1 - mu) * (2 / rp - 1 / a))
    # rotating-frame velocity at perigee
    y = np.r_[-mu + rp, 0.0, 0.0, 0.0, vp - rp, 0.0, c.m0_kg]
    dt = days * 86400.0 / c.tu_s / steps
    for _ in range(steps):
        v_in = y[3:6] + np.cross([0.0, 0.0, 1.0], y[:3])
        u = v_in / np.linalg.norm(v_in) * c.t_max_N
        y = propagate_segment(y, dt, u, 1.0, c)
    return y


def reference_arrival(xi0, c: SystemConstants, n_controls=20):
    ctrl = np.array([[2 * np.pi * j / n_controls, 0.0, 0.5] for j in range(n_controls)])
    tr = ShootingTranscription(BoundaryConditions(np.r_[xi0, c.m0_kg], np.zeros(6)), c)
    x = tr.pack(30.0, 2.0, 2.0, 0.0, ctrl)
    tau_s, _, tau_f, _, angles = tr.unpack(x)
    U = controls_to_cartesian(angles)
    y = tr.forward_arc(x, 1.0)
    for j in range(n_controls // 2, n_controls):
        y = propagate_segment(y, tau_s / n_controls, U[j], 1.0, c)
    return propagate_segment(y, tau_f, np.zeros(3), 1.0, c)


def main():
    c = SystemConstants()
    end = gto_spiral(c)
    xi0 = np.round(end[:6], 9)
    print("spiral end  ", np.array2string(end[:6], precision=8))
    print("CR3BP_XI0   ", np.array2string(np.asarray(CR3BP_XI0), precision=8))
    print("Jacobi at departure", jacobi_constant(np.r_[end[:6], c.m0_kg], c))
    arr = reference_arrival(np.asarray(CR3BP_XI0), c)
    print("arrival     ", np.array2string(arr[:6], precision=8))
    print("CR3BP_XIF   ", np.array2string(np.asarray(CR3BP_XIF), precision=8))
    print("max |diff| departure %.2e, arrival %.2e"
          % (np.abs(xi0 - CR3BP_XI0).max(), np.abs(arr[:6] - CR3BP_XIF).max()))


if __name__ == "__main__":
    main()
