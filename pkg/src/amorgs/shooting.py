"""Forward-backward finite-burn shooting transcription.

Decision vector layout (dimension 3N+4)::

    x = (tau_s, tau_i, tau_f, m_f, az_1, el_1, T_1, ..., az_N, el_N, T_N)

The forward arc coasts from the departure state for ``tau_i`` and then flies
the first N/2 thrust segments; the backward arc starts from the arrival state
with mass ``m_f``, coasts backward for ``tau_f`` and flies segments
N, N-1, ..., N/2+1 backward in time. The defect is backward minus forward at
the shared midpoint.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cr3bp import PropagationError, SystemConstants, propagate_segment, replay_segment
from .solver import RejectedStep

TAU_S_MAX = 40.0
TAU_COAST_MAX = 15.0
MF_RANGE = (350.0, 450.0)
FD_REL_STEP = 1e-7
OBJECTIVE_SCALE = 100.0


def spherical_to_cartesian(entry) -> np.ndarray:
    """(azimuth, elevation, magnitude) -> thrust vector in newtons."""
    az, el, T = (float(v) for v in entry)
    ce = np.cos(el)
    return T * np.array([ce * np.cos(az), ce * np.sin(az), np.sin(el)])


def controls_to_cartesian(controls) -> np.ndarray:
    c = np.asarray(controls, dtype=float).reshape(-1, 3)
    az, el, T = c[:, 0], c[:, 1], c[:, 2]
    ce = np.cos(el)
    return T[:, None] * np.stack([ce * np.cos(az), ce * np.sin(az), np.sin(el)], axis=1)


@dataclass
class BoundaryConditions:
    """Departure 7-state (q, v, m0) and arrival 6-state, synodic DU/TU, kg."""

    xi0: np.ndarray
    xif_state: np.ndarray

    def __post_init__(self):
        self.xi0 = np.asarray(self.xi0, dtype=float)
        self.xif_state = np.asarray(self.xif_state, dtype=float)
        if self.xi0.shape != (7,) or self.xif_state.shape != (6,):
            raise ValueError("xi0 must be a 7-state and xif_state a 6-state")
        if not (np.all(np.isfinite(self.xi0)) and np.all(np.isfinite(self.xif_state))):
            raise ValueError("boundary states must be finite")

    @classmethod
    def from_config(cls, cfg: dict, constants: SystemConstants) -> "BoundaryConditions":
        m0 = float(cfg.get("m0_kg", constants.m0_kg))
        return cls(np.r_[np.asarray(cfg["xi0"], dtype=float), m0], np.asarray(cfg["xif_state"], dtype=float))


class ShootingTranscription:
    """Defect constraints and bounds for one boundary-value pair.

    Parameters
    ----------
    bc : BoundaryConditions
    constants : SystemConstants
    n_segments : int
        Even number of constant-thrust segments.
    rtol, atol : float
        Propagator tolerances.
    """

    def __init__(self, bc: BoundaryConditions, constants: SystemConstants | None = None,
                 n_segments: int = 20, rtol: float = 1e-12, atol: float = 1e-12):
        if n_segments < 2 or n_segments % 2:
            raise ValueError("n_segments must be a positive even number")
        self.bc = bc
        self.constants = constants or SystemConstants()
        self.n = n_segments
        self.rtol = rtol
        self.atol = atol

    @property
    def dimension(self) -> int:
        return 3 * self.n + 4

    def bounds(self) -> np.ndarray:
        lo = [0.0, 0.0, 0.0, MF_RANGE[0]]
        hi = [TAU_S_MAX, TAU_COAST_MAX, TAU_COAST_MAX, MF_RANGE[1]]
        lo += [0.0, -np.pi / 2, 0.0] * self.n
        hi += [2 * np.pi, np.pi / 2, self.constants.t_max_N] * self.n
        return np.stack([np.array(lo), np.array(hi)], axis=1)

    def unpack(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dimension,):
            raise ValueError(f"expected a {self.dimension}-vector, got shape {x.shape}")
        return x[0], x[1], x[2], x[3], x[4:].reshape(self.n, 3)

    def pack(self, tau_s, tau_i, tau_f, m_f, controls) -> np.ndarray:
        return np.r_[tau_s, tau_i, tau_f, m_f, np.asarray(controls, dtype=float).ravel()]

    def _segments(self, x, backward):
        """(duration, thrust) per segment of one arc, coast first."""
        tau_s, tau_i, tau_f, _, ctrl = self.unpack(x)
        U = controls_to_cartesian(ctrl)
        dt = tau_s / self.n
        half = self.n // 2
        if backward:
            # backward segment k flies control u_{N-k+1}
            return [(-tau_f, np.zeros(3))] + [(-dt, U[self.n - k]) for k in range(1, half + 1)]
        return [(tau_i, np.zeros(3))] + [(dt, U[j - 1]) for j in range(1, half + 1)]

    def _arc(self, x, alpha, backward, start=0, base=None):
        """States at the segment boundaries of one arc and each segment's steps.

        The state list is ``[start, after coast, after segment 1, ...]``. With
        ``base`` (a nominal ``(states, steps)``) the first ``start`` segments are
        reused and the rest replay the nominal step sequence.
        """
        segs = self._segments(x, backward)
        if base is None or start == 0:
            first = np.r_[self.bc.xif_state, x[3]] if backward else self.bc.xi0.copy()
            states, steps = [first], []
            start = 0
        else:
            states, steps = list(base[0][: start + 1]), list(base[1][:start])
        for k in range(start, len(segs)):
            dur, u = segs[k]
            if base is None:
                y, fr = propagate_segment(states[k], dur, u, alpha, self.constants, self.rtol, self.atol,
                                          return_steps=True)
            else:
                fr = base[1][k]
                y = replay_segment(states[k], dur, u, alpha, self.constants, fr)
            states.append(y)
            steps.append(fr)
        return states, steps

    def forward_arc(self, x, alpha) -> np.ndarray:
        return self._arc(np.asarray(x, dtype=float), alpha, False)[0][-1]

    def backward_arc(self, x, alpha) -> np.ndarray:
        return self._arc(np.asarray(x, dtype=float), alpha, True)[0][-1]

    def defect(self, x, alpha) -> np.ndarray:
        """Backward minus forward midpoint (DU, DU/TU, kg)."""
        return self.backward_arc(x, alpha) - self.forward_arc(x, alpha)

    def _scale(self, d):
        d = d.copy()
        d[6] /= self.constants.m0_kg
        return d

    def scaled_defect(self, x, alpha) -> np.ndarray:
        """Defect with the mass component divided by m0."""
        return self._scale(self.defect(x, alpha))

    @staticmethod
    def objective(x) -> float:
        return -float(np.asarray(x, dtype=float)[3])

    def defect_jacobian(self, x, alpha, scaled=True, arcs=None):
        """Forward-difference Jacobian of the defect, shape (7, 3N+4).

        Perturbed arcs replay the nominal step sequence, so integrator step
        selection does not leak noise into the differences. Perturbing one
        control only re-propagates from the segment it drives.
        """
        x = np.asarray(x, dtype=float)
        F, B = arcs if arcs is not None else (self._arc(x, alpha, False), self._arc(x, alpha, True))
        base = B[0][-1] - F[0][-1]
        half = self.n // 2
        J = np.empty((7, x.size))
        for i in range(x.size):
            h = FD_REL_STEP * (1.0 + abs(x[i]))
            xp = x.copy()
            xp[i] += h
            f_mid, b_mid = F[0][-1], B[0][-1]
            if i == 0:
                f_mid = self._arc(xp, alpha, False, 1, F)[0][-1]
                b_mid = self._arc(xp, alpha, True, 1, B)[0][-1]
            elif i == 1:
                f_mid = self._arc(xp, alpha, False, 0, F)[0][-1]
            elif i in (2, 3):
                b_mid = self._arc(xp, alpha, True, 0, B)[0][-1]
            else:
                j = (i - 4) // 3 + 1  # 1-based control index
                if j <= half:
                    f_mid = self._arc(xp, alpha, False, j, F)[0][-1]
                else:
                    b_mid = self._arc(xp, alpha, True, self.n - j + 1, B)[0][-1]
            J[:, i] = ((b_mid - f_mid) - base) / h
        if scaled:
            J[6] /= self.constants.m0_kg
        return J

    def problem(self, alpha) -> "ShootingNLP":
        return ShootingNLP(self, alpha)


class ShootingNLP:
    """Solver-facing view in unit-box coordinates ``z`` with x = lo + z (hi - lo).

    The objective is ``-m_f / 100`` and the constraints are the scaled defect.
    Propagation failures surface as :class:`~amorgs.solver.RejectedStep`.
    """

    def __init__(self, tr: ShootingTranscription, alpha: float):
        self.tr = tr
        self.alpha = float(alpha)
        b = tr.bounds()
        self.lo, self.hi = b[:, 0], b[:, 1]
        self.span = self.hi - self.lo
        self._key = None
        self._states = None

    def to_x(self, z):
        return self.lo + np.asarray(z, dtype=float) * self.span

    def to_z(self, x):
        return (np.asarray(x, dtype=float) - self.lo) / self.span

    @property
    def bounds(self):
        n = self.lo.size
        return np.stack([np.zeros(n), np.ones(n)], axis=1)

    def objective(self, z) -> float:
        return -float(self.to_x(z)[3]) / OBJECTIVE_SCALE

    def gradient(self, z) -> np.ndarray:
        g = np.zeros(self.lo.size)
        g[3] = -self.span[3] / OBJECTIVE_SCALE
        return g

    def _arcs(self, z):
        key = np.asarray(z, dtype=float).tobytes()
        if key != self._key:
            x = self.to_x(z)
            try:
                self._states = (self.tr._arc(x, self.alpha, False), self.tr._arc(x, self.alpha, True))
            except PropagationError as exc:
                self._key, self._states = None, None
                raise RejectedStep(str(exc)) from exc
            self._key = key
        return self._states

    def constraints(self, z) -> np.ndarray:
        F, B = self._arcs(z)
        return self.tr._scale(B[0][-1] - F[0][-1])

    def jacobian(self, z, cz=None) -> np.ndarray:
        states = self._arcs(z)
        try:
            J = self.tr.defect_jacobian(self.to_x(z), self.alpha, True, states)
        except PropagationError as exc:
            raise RejectedStep(str(exc)) from exc
        return J * self.span[None, :]
