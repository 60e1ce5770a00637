import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.interpolate import CubicSpline
from scipy.linalg import solve_banded

from vortexlab.higgs import Divisor, build_higgs_explicit_sphere, build_higgs_green
from vortexlab.surface import build_sphere, build_torus
from vortexlab.vortex import (
    BradlowViolated,
    VortexProblem,
    gradient_energy,
    mhat_energy,
    mhat_gradient,
    solve_vortex,
    vortex_residual,
    vortex_stability_bound,
)


@pytest.fixture(scope="module")
def torus_problem():
    g = build_torus(1j, 30.0, 64)
    h = build_higgs_green(g, Divisor((0.5 + 0.5j,), (1,)))
    return VortexProblem(g, h, 1.0)


@pytest.fixture(scope="module")
def torus_solution(torus_problem):
    return solve_vortex(torus_problem)


def _radial_oracle(R, N, V, tau, c0, cells):
    """Finite-volume Newton solve of the axisymmetric vortex equation in colatitude.

    Solves ``−(1/R² sinθ)(sinθ f′)′ + 2πN/V + ½(c0 sin²θ e^{2f} − τ) = 0`` on
    ``(0, π)`` with natural (regularity) conditions at both poles.
    """
    h = math.pi / cells
    faces = np.linspace(0.0, math.pi, cells + 1)
    th = 0.5 * (faces[:-1] + faces[1:])
    sf = np.sin(faces) / (R * R * h)
    area = np.cos(faces[:-1]) - np.cos(faces[1:])
    s2 = np.sin(th) ** 2
    f = np.full(cells, 0.5 * math.log(tau / c0))
    for _ in range(60):
        e = c0 * s2 * np.exp(2 * f)
        flux = sf[1:-1] * np.diff(f)
        div = np.zeros(cells)
        div[:-1] -= flux
        div[1:] += flux
        F = div + area * (2 * math.pi * N / V + 0.5 * (e - tau))
        ab = np.zeros((3, cells))
        ab[1] = sf[:-1] + sf[1:] + area * e
        ab[0, 1:] = -sf[1:-1]
        ab[2, :-1] = -sf[1:-1]
        step = solve_banded((1, 1), ab, -F)
        f += step
        if np.max(np.abs(step)) < 1e-14:
            break
    return th, f


def test_sphere_balanced_pair_matches_radial_oracle():
    """Axisymmetric vortex for D=[0]+[∞] at L=64 matches a refined colatitude solve."""
    V, tau = 50.0, 1.0
    g = build_sphere(V, 64)
    higgs = build_higgs_explicit_sphere(g, Divisor((0, math.inf), (1, 1)))
    s2 = np.sin(g.colatitude) ** 2
    c0s = higgs.density[:, 0] / s2
    assert np.ptp(c0s) < 1e-12 * c0s.max()
    c0 = float(np.mean(c0s))
    sol = solve_vortex(VortexProblem(g, higgs, tau))
    R = g.radius
    th_a, f_a = _radial_oracle(R, 2, V, tau, c0, 4000)
    th_b, f_b = _radial_oracle(R, 2, V, tau, c0, 8000)
    fine = CubicSpline(th_b, f_b)(g.colatitude)
    coarse = CubicSpline(th_a, f_a)(g.colatitude)
    oracle = fine + (fine - coarse) / 3.0
    assert np.max(np.abs(fine - coarse)) < 1e-5
    assert np.max(np.ptp(sol.f, axis=1)) < 1e-10
    assert np.max(np.abs(sol.f[:, 0] - oracle)) < 1e-4


def test_mhat_zero_at_origin(torus_problem):
    assert mhat_energy(torus_problem, torus_problem.geom.constant(0.0)) == pytest.approx(0.0, abs=1e-12)


def test_mhat_constant_shift(torus_problem):
    p = torus_problem
    g = p.geom
    k = 0.37
    N, V, tau = p.degree, g.volume, p.tau
    expect = 0.25 * g.integrate(p.higgs.density) * math.expm1(2 * k) - 0.5 * k * tau * (V - 4 * math.pi * N / tau)
    assert mhat_energy(p, g.constant(k)) == pytest.approx(expect, rel=1e-12)


def test_gradient_integral_at_origin(torus_problem):
    p = torus_problem
    g = p.geom
    lhs = g.integrate(mhat_gradient(p, g.constant(0.0)))
    rhs = 0.5 * (g.integrate(p.higgs.density) - p.tau * g.volume) + 2 * math.pi * p.degree
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_gradient_finite_differences(torus_problem):
    """Central differences of M̂ agree with ∫ḟ g over 20 random directions."""
    p = torus_problem
    g = p.geom
    rng = np.random.default_rng(11)
    kpot = 0.3 * g.random_potential(rng, 3, 0.4)
    q = VortexProblem(g, p.higgs, p.tau, kpot)
    f = g.random_field(rng, 3, 0.5)
    for _ in range(20):
        d = g.random_field(rng, 4, 1.0)
        eps = 1e-5
        fd = (mhat_energy(q, f + eps * d) - mhat_energy(q, f - eps * d)) / (2 * eps)
        an = g.inner(d, mhat_gradient(q, f))
        assert fd == pytest.approx(an, rel=1e-6, abs=1e-6)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_mhat_convex_along_lines(seed):
    g = build_torus(0.3 + 1.1j, 20.0, 32)
    h = build_higgs_green(g, Divisor((1.0 + 1.0j, 2.0 + 0.2j), (1, 1)))
    p = VortexProblem(g, h, 1.0)
    rng = np.random.default_rng(seed)
    f0 = g.random_field(rng, 3, 0.5)
    f1 = g.random_field(rng, 4, 1.0)
    e = [mhat_energy(p, f0 + t * f1) for t in (-0.1, 0.0, 0.1)]
    assert e[0] + e[2] - 2 * e[1] > 0


def test_solution_contracts(torus_solution):
    s = torus_solution
    tau, V = 1.0, 30.0
    assert s.residual_sup <= 1e-8 * tau
    assert s.pointwise_max <= tau * (1 + 1e-8)
    assert s.degree_defect <= 1e-6 * tau * V
    assert np.max(np.abs(mhat_gradient(s.problem, s.f))) <= 1e-8


def test_degree_identity_fine_torus():
    g = build_torus(1j, 30.0, 128)
    h = build_higgs_green(g, Divisor((0.5 + 0.5j,), (1,)))
    s = solve_vortex(VortexProblem(g, h, 1.0))
    assert s.degree_integral() == pytest.approx(30 - 4 * math.pi, abs=1e-5)


def test_bradlow_violation_detected():
    g = build_torus(1j, 10.0, 32)
    h = build_higgs_green(g, Divisor((0.5 + 0.5j,), (1,)))
    with pytest.raises(BradlowViolated):
        solve_vortex(VortexProblem(g, h, 1.0))


def test_uniqueness_from_random_starts(torus_problem, torus_solution):
    g = torus_problem.geom
    rng = np.random.default_rng(4)
    for _ in range(2):
        s = solve_vortex(torus_problem, init=g.random_field(rng, 4, 1.0))
        assert np.max(np.abs(s.f - torus_solution.f)) <= 1e-8


def test_minimizing_property(torus_problem, torus_solution):
    g = torus_problem.geom
    rng = np.random.default_rng(9)
    best = mhat_energy(torus_problem, torus_solution.f)
    for _ in range(20):
        f = torus_solution.f + g.random_field(rng, 4, 0.3)
        assert best <= mhat_energy(torus_problem, f)


def test_curvature_l2_bound(torus_solution):
    s = torus_solution
    N, tau = 1, 1.0
    rho = s.density
    assert 0.5 * gradient_energy(s.problem.geom, rho) <= 2 * math.pi * tau**2 * N * (1 + 1e-6)


def test_newton_quadratic_tail(torus_problem):
    s = solve_vortex(torus_problem, tol=1e-13)
    h = [r for r in s.residual_history if r > 1e-12]
    assert len(h) >= 3
    a, b, c = h[-3:]
    assert c <= 10 * b * b / a * max(1.0, b / a) or c <= 1e-9


def test_stability_bound(torus_problem, torus_solution):
    g = torus_problem.geom
    z = g.constant(0.0)
    lhs, rhs = vortex_stability_bound(torus_problem, z, z, torus_solution, torus_solution)
    assert (lhs, rhs) == (0.0, 0.0)
    rng = np.random.default_rng(3)
    for _ in range(3):
        k = 0.3 * g.random_potential(rng, 3, 0.5)
        lhs, rhs = vortex_stability_bound(torus_problem, z, k, sol_a=torus_solution)
        assert lhs <= rhs * (1 + 1e-6)


def test_stability_lhs_monotone_in_bump(torus_problem, torus_solution):
    g = torus_problem.geom
    rng = np.random.default_rng(8)
    bump = g.random_potential(rng, 2, 0.4)
    z = g.constant(0.0)
    lhs = [vortex_stability_bound(torus_problem, z, eps * bump, sol_a=torus_solution)[0] for eps in (0.05, 0.1, 0.2)]
    assert lhs[0] < lhs[1] < lhs[2]


def test_residual_vanishes_under_background_change(torus_problem):
    g = torus_problem.geom
    k = 0.5 * g.random_potential(np.random.default_rng(2), 3, 0.5)
    p = VortexProblem(g, torus_problem.higgs, 1.0, k)
    s = solve_vortex(p)
    assert np.max(np.abs(vortex_residual(p, s.f))) < 1e-8
    assert s.degree_integral() == pytest.approx(p.bradlow_gap, rel=1e-6)
