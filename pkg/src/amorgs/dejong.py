"""Rotated De Jong 5th function family.

The template matrix ``A`` places the local minima; a planar rotation by
``alpha`` moves all of them together. Sixth powers are taken per component,
so the landscape itself is not rotation-equivariant; only the template
locations rotate exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .problem import ProblemFamily

DEFAULT_TEMPLATE = np.array(
    [
        [-32.0, -32.0, -28.0, -28.0, 12.0, 12.0, 18.0, 18.0],
        [32.0, 28.0, 32.0, 28.0, -12.0, -18.0, -12.0, -18.0],
    ]
)
BOUND = 50.0
OFFSET = 0.002
DENOM_CAP = 1e300


def classic_template() -> np.ndarray:
    """Classic 5x5 grid over {-32, -16, 0, 16, 32}^2 (25 minima)."""
    g = np.array([-32.0, -16.0, 0.0, 16.0, 32.0])
    return np.array([np.tile(g, 5), np.repeat(g, 5)])


def rotation(alpha: float) -> np.ndarray:
    c, s = np.cos(alpha), np.sin(alpha)
    return np.array([[c, -s], [s, c]])


@dataclass
class DeJongFamily:
    """One member of the rotated family.

    Parameters
    ----------
    template : (2, n) array
        Unrotated minima locations; defaults to the 8-column instance.
    alpha : float
        Rotation angle in [0, pi/2].
    """

    template: np.ndarray = field(default_factory=lambda: DEFAULT_TEMPLATE.copy())
    alpha: float = 0.0

    def __post_init__(self):
        A = np.asarray(self.template, dtype=float)
        if A.ndim != 2 or A.shape[0] != 2 or A.shape[1] < 1:
            raise ValueError("template must have shape (2, n) with n >= 1")
        if np.any(np.abs(A) > BOUND):
            raise ValueError("template columns must lie inside [-50, 50]^2")
        self.template = A

    @property
    def lower(self):
        return np.full(2, -BOUND)

    @property
    def upper(self):
        return np.full(2, BOUND)

    @property
    def bounds(self) -> np.ndarray:
        return np.array([[-BOUND, BOUND], [-BOUND, BOUND]])

    def with_alpha(self, alpha: float) -> "DeJongFamily":
        return DeJongFamily(self.template, alpha)

    def problem_family(self) -> ProblemFamily:
        return ProblemFamily("dejong", self.lower, self.upper, 0, (0.0, np.pi / 2))

    def rotated_template(self) -> np.ndarray:
        return rotation(self.alpha) @ self.template


def rotated_minima(family: DeJongFamily) -> list[np.ndarray]:
    if not (0.0 <= family.alpha <= np.pi / 2 + 1e-12):
        raise ValueError("alpha must lie in [0, pi/2]")
    Abar = family.rotated_template()
    return [Abar[:, i].copy() for i in range(Abar.shape[1])]


def _terms(x, Abar):
    d = np.asarray(x, dtype=float)[:, None] - Abar
    with np.errstate(over="ignore"):
        den = 1.0 + d[0] ** 6 + d[1] ** 6
    return d, np.minimum(den, DENOM_CAP)


def objective(x, family: DeJongFamily) -> float:
    _, den = _terms(x, family.rotated_template())
    return float(1.0 / (OFFSET + np.sum(1.0 / den)))


def gradient(x, family: DeJongFamily) -> np.ndarray:
    d, den = _terms(x, family.rotated_template())
    S = OFFSET + np.sum(1.0 / den)
    capped = den >= DENOM_CAP
    w = np.where(capped, 0.0, 6.0 / den**2)
    # dJ/dx = S^-2 * sum_i 6 d_i^5 / den_i^2
    with np.errstate(over="ignore", invalid="ignore"):
        g = np.array([np.sum(w * np.where(capped, 0.0, d[0] ** 5)),
                      np.sum(w * np.where(capped, 0.0, d[1] ** 5))])
    return g / S**2


def make_callables(family: DeJongFamily):
    """(f, grad) closures for the solver."""
    fam = DeJongFamily(family.template, family.alpha)

    def f(x):
        return objective(x, fam)

    def g(x):
        return gradient(x, fam)

    return f, g
