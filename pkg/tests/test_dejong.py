import math

import mpmath as mp
import numpy as np
import pytest

from amorgs.dejong import (
    DeJongFamily,
    classic_template,
    gradient,
    make_callables,
    objective,
    rotated_minima,
    rotation,
)
from amorgs.solver import SolverConfig, minimize_unconstrained

from .oracles import DEJONG_MINIMA_ALPHA0

CFG = SolverConfig(max_step=1.0)
TRUE_MIN = np.array([m[:2] for m in DEJONG_MINIMA_ALPHA0])


def mp_gradient(x, fam, dps=40):
    """Numerical derivative of the objective in extended precision."""
    A = fam.rotated_template()
    with mp.workdps(dps):
        a = [[mp.mpf(float(v)) for v in row] for row in A]

        def J(u, v):
            s = mp.mpf("0.002") + sum(1 / (1 + (u - a[0][i]) ** 6 + (v - a[1][i]) ** 6) for i in range(A.shape[1]))
            return 1 / s

        x0, x1 = mp.mpf(float(x[0])), mp.mpf(float(x[1]))
        return np.array([float(mp.diff(lambda t: J(t, x1), x0)), float(mp.diff(lambda t: J(x0, t), x1))])


def test_rotated_minima_examples():
    assert np.allclose(rotated_minima(DeJongFamily(alpha=0.0))[0], [-32, 32])
    assert np.allclose(rotated_minima(DeJongFamily(alpha=np.pi / 2))[0], [-32, -32], atol=1e-12)
    assert np.allclose(rotated_minima(DeJongFamily(alpha=np.pi / 4))[0], [-32 * np.sqrt(2), 0], atol=1e-12)
    with pytest.raises(ValueError):
        rotated_minima(DeJongFamily(alpha=2.0))


def test_objective_examples():
    fam = DeJongFamily()
    # 30-digit direct evaluations
    assert objective([-32, 32], fam) == pytest.approx(0.997396577827283195, rel=1e-14)
    assert objective([50, -50], fam) == pytest.approx(499.999717749800489, rel=1e-14)
    assert np.isfinite(objective([1e80, -1e80], fam))
    assert objective([1e80, -1e80], fam) == pytest.approx(500)


def test_template_validation():
    with pytest.raises(ValueError):
        DeJongFamily(template=np.array([[60.0], [0.0]]))
    assert classic_template().shape == (2, 25)


def test_minima_locations_rotate_exactly():
    rng = np.random.default_rng(0)
    fam = DeJongFamily()
    for a in rng.uniform(0, np.pi / 2, 10):
        got = np.array(rotated_minima(fam.with_alpha(a)))
        assert np.allclose(got, (rotation(a) @ fam.template).T, atol=1e-12)


def test_quarter_turn_symmetry():
    # (x, y) -> (-y, x) permutes components and flips one sign; sixth powers
    # are even, so the landscape is exactly equivariant at alpha = pi/2
    rng = np.random.default_rng(1)
    f0, f90 = DeJongFamily(alpha=0.0), DeJongFamily(alpha=np.pi / 2)
    for x in rng.uniform(-50, 50, (50, 2)):
        assert objective(rotation(np.pi / 2) @ x, f90) == pytest.approx(objective(x, f0), rel=1e-12)


def test_gradient_matches_extended_precision_derivative():
    rng = np.random.default_rng(2)
    fam = DeJongFamily(alpha=0.3)
    worst = 0.0
    for x in rng.uniform(-50, 50, (1000, 2)):
        g, ref = gradient(x, fam), mp_gradient(x, fam, 30)
        worst = max(worst, np.linalg.norm(g - ref) / np.linalg.norm(ref))
    assert worst < 1e-5


def test_gradient_matches_central_differences_off_plateau():
    rng = np.random.default_rng(3)
    fam = DeJongFamily()
    M = TRUE_MIN
    for _ in range(50):
        x = M[rng.integers(8)] + rng.uniform(-1.5, 1.5, 2)
        h = 1e-6
        fd = np.array([(objective(x + h * e, fam) - objective(x - h * e, fam)) / (2 * h) for e in np.eye(2)])
        g = gradient(x, fam)
        if np.linalg.norm(g) > 1e-3:
            assert np.linalg.norm(g - fd) / np.linalg.norm(g) < 1e-6


def test_true_minima_are_stationary_and_columns_are_not():
    fam = DeJongFamily()
    for m in TRUE_MIN:
        assert np.linalg.norm(gradient(m, fam)) < 1e-8
    # the template columns sit roughly 0.16-0.23 away from the true minima
    for col in fam.template.T:
        assert np.linalg.norm(gradient(col, fam)) > 1e-5
        assert 0.1 < np.min(np.linalg.norm(TRUE_MIN - col, axis=1)) < 0.3


def test_symmetry_axis_gradient():
    # the cluster is symmetric under x <-> -y reflection; on the axis y = -x
    # the gradient has no component along (1, 1)
    fam = DeJongFamily()
    mid = np.array([-30.0, 30.0])
    g = gradient(mid, fam)
    assert abs(g @ np.array([1.0, 1.0]) / np.sqrt(2)) < 1e-10 * max(1.0, np.linalg.norm(g))


def test_solver_fixed_points_at_true_minima():
    fam = DeJongFamily()
    f, g = make_callables(fam)
    for m in TRUE_MIN:
        r = minimize_unconstrained(f, g, m, fam.bounds, CFG)
        assert r.converged and r.iterations <= 2
        assert np.linalg.norm(r.x_star - m) < 1e-6


@pytest.mark.parametrize("alpha", [0.0, np.pi / 2])
def test_solver_converges_from_unit_neighborhood(alpha):
    fam = DeJongFamily(alpha=alpha)
    f, g = make_callables(fam)
    M = TRUE_MIN @ rotation(alpha).T
    # the minima are very flat (Hessian eigenvalues near 0.02), so locating
    # them to 1e-4 needs a gradient tolerance well below 1e-6
    tight = SolverConfig(optimality_tol=1e-8, max_step=1.0)
    rng = np.random.default_rng(4)
    for m in M:
        for _ in range(10):
            d = rng.normal(size=2)
            x0 = m + d / np.linalg.norm(d) * rng.uniform(0, 1)
            r = minimize_unconstrained(f, g, x0, fam.bounds, tight)
            assert r.converged
            assert np.linalg.norm(r.x_star - m) < 1e-4
            r = minimize_unconstrained(f, g, x0, fam.bounds, CFG)
            assert r.converged and np.linalg.norm(r.x_star - m) < 1e-3


def test_solver_from_offset_and_plateau():
    fam = DeJongFamily()
    f, g = make_callables(fam)
    cfg = CFG
    r = minimize_unconstrained(f, g, TRUE_MIN[0] + 0.5, fam.bounds, cfg)
    assert r.converged and np.linalg.norm(r.x_star - TRUE_MIN[0]) < 1e-4
    r = minimize_unconstrained(f, g, [50.0, -50.0], fam.bounds, cfg)
    assert np.all(np.isfinite(r.x_star)) and math.isfinite(r.objective)
    if r.converged:
        assert np.min(np.linalg.norm(TRUE_MIN - r.x_star, axis=1)) < 1e-3
