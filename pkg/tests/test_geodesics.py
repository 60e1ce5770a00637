import math

import numpy as np
import pytest

from vortexlab.geodesics import (
    OnePSRay,
    RayProfile,
    d1_path_length,
    fs_ray_potential,
    geodesic_residual,
    geodesic_residual_field,
    radial_abs_integral,
    ray_k_alpha_profile,
    ray_slope_limit,
    solve_epsilon_geodesic,
)
from vortexlab.higgs import Divisor, build_higgs_explicit_sphere
from vortexlab.surface import build_sphere, build_torus, conformal_curvature, conformal_factor

V = 50.0


@pytest.fixture(scope="module")
def sphere64():
    return build_sphere(V, 64)


@pytest.fixture(scope="module")
def sphere16():
    return build_sphere(V, 16)


def test_fs_ray_basic_values(sphere64):
    g = sphere64
    assert np.array_equal(fs_ray_potential(g, 0.0), g.constant(0.0))
    ray = OnePSRay(V)
    assert ray.potential_x(1.0, 0.7) == pytest.approx(-V * 0.7 / (2 * math.pi), rel=1e-14)
    with pytest.raises(ValueError):
        fs_ray_potential(build_torus(1j, 1.0, 8), 0.1)


def test_fs_ray_metric_is_pullback(sphere64):
    g = sphere64
    for t in (0.25, 0.5):
        om = conformal_factor(g, fs_ray_potential(g, t))
        assert np.max(np.abs(om - OnePSRay(V).conformal_factor(g, t))) < 1e-8
        assert g.integrate(om) == pytest.approx(V, rel=1e-12)


def test_fs_ray_curvature_constant():
    """Curvature takes four derivatives of φ, so round-off grows like L⁴; L=32 resolves t ≤ 0.25."""
    g = build_sphere(V, 32)
    for t in (0.1, 0.25):
        S = conformal_curvature(g, fs_ray_potential(g, t))
        assert np.ptp(S) < 1e-8
        assert np.mean(S) == pytest.approx(4 * math.pi / V, rel=1e-8)


def test_fs_ray_velocity_mass_is_shift(sphere64):
    g = sphere64
    for b in (0.0, 0.4):
        ray = OnePSRay(V, b)
        for t in (0.0, 0.3):
            assert g.integrate(ray.velocity(g, t) * ray.conformal_factor(g, t)) == pytest.approx(b * V, abs=1e-9)


def test_fs_ray_satisfies_geodesic_equation(sphere64):
    g = sphere64
    dt = 1e-3
    for b in (0.0, 0.5):
        samples = [fs_ray_potential(g, t, b) for t in (0.3 - dt, 0.3, 0.3 + dt)]
        assert geodesic_residual(g, samples, dt) <= 1e-5 * V


def test_affine_path_is_not_geodesic(sphere64):
    g = sphere64
    phi1 = fs_ray_potential(g, 0.2)
    dt = 1e-2
    t = 0.5
    res = geodesic_residual_field(g, [(t - dt) * phi1, t * phi1, (t + dt) * phi1], dt)
    expect = -g.project(g.grad_norm2(phi1) / conformal_factor(g, t * phi1))
    assert np.max(np.abs(res - expect)) < 1e-8 * np.max(np.abs(expect))
    assert np.max(np.abs(res)) > 0.1


def test_epsilon_geodesic_equal_flat_endpoints(sphere16):
    """Flat equal endpoints: the path is εt(t−1)/2, constant in space."""
    g = sphere16
    eps = 0.1
    geo = solve_epsilon_geodesic(g, g.constant(0.0), g.constant(0.0), eps, M=17)
    t = geo.times
    expect = eps * t * (t - 1) / 2
    assert np.max(np.abs(geo.profiles - expect[:, None])) < 1e-8
    assert geo.residual_sup < 1e-7


def test_epsilon_geodesic_endpoints_and_cauchy_trend(sphere16):
    g = sphere16
    a, b = g.constant(0.0), fs_ray_potential(g, 1.0)
    sols = [solve_epsilon_geodesic(g, a, b, eps, M=17) for eps in (0.1, 0.05, 0.025)]
    for s in sols:
        assert np.max(np.abs(s.kpot(0) - a)) < 1e-10
        assert np.max(np.abs(s.kpot(len(s.times) - 1) - b)) < 1e-10
        assert s.residual_sup < 1e-7
        assert all(np.min(conformal_factor(g, u)) > 0 for u in s.fields)
    d = [np.max(np.abs(x.profiles - y.profiles)) for x, y in zip(sols, sols[1:])]
    assert d[1] < d[0]


def test_epsilon_geodesic_rejects_non_axisymmetric(sphere16):
    g = sphere16
    kp = 0.1 * g.unit_nodes[..., 0]
    with pytest.raises(ValueError):
        solve_epsilon_geodesic(g, g.constant(0.0), kp, 0.1, M=9)


def test_radial_oracle_matches_grid_abs_integral(sphere64):
    g = sphere64
    ray = OnePSRay(V)
    exact = V * V / (4 * math.pi)  # φ̇₀ = −(V/2π)x and ∫|x|ω₀ = V/2
    x = np.linspace(-1, 1, 3)
    assert ray.velocity_x(x, 0.0) == pytest.approx(-V / (2 * math.pi) * x)
    oracle = radial_abs_integral(V, lambda s: float(ray.velocity_x(s, 0.0)))
    assert oracle == pytest.approx(exact, rel=1e-12)
    assert g.integrate_abs(ray.velocity(g, 0.0)) == pytest.approx(oracle, rel=1e-6)


def test_d1_length_constant_and_fs_ray(sphere64):
    g = sphere64
    assert d1_path_length(g, [g.constant(1.0)] * 4, np.linspace(0, 1, 4)) == pytest.approx(0.0, abs=1e-12)
    ray = OnePSRay(V)
    T = 1.0
    ts = np.linspace(0.0, T, 11)
    fields = [ray.potential(g, t) for t in ts]
    speed = radial_abs_integral(V, lambda s: float(ray.velocity_x(s, 0.0)))
    assert d1_path_length(g, fields, ts) == pytest.approx(T * speed, rel=0.005)


def test_ray_profile_alpha_zero_tracks_k_energy():
    """With α = 0 the profile is K along the ray, flat on the round sphere."""
    g = build_sphere(V, 24)
    h = build_higgs_explicit_sphere(g, Divisor((0.0, 1.0, -1.0), (1, 1, 1)))
    prof = ray_k_alpha_profile(g, h, 0.0, 1.0, OnePSRay(V), [0.0, 0.5, 1.0])
    assert np.max(np.abs(prof.k_alpha_prime)) < 1e-8 * V
    assert prof.to_csv().splitlines()[0] == "t,k_alpha,k_alpha_prime"
    assert len(prof.rows()) == 3


def test_balanced_ray_slope_vanishes():
    g = build_sphere(V, 24)
    h = build_higgs_explicit_sphere(g, Divisor((0.0, 1.0), (1, 1)))
    ts = np.arange(0.0, 6.01, 0.5)
    prof = ray_k_alpha_profile(g, h, 0.05, 1.0, OnePSRay(V), ts)
    scale = 0.1 * (V - 8 * math.pi)
    assert abs(ray_slope_limit(prof)) < 0.02 * scale
    assert np.min(np.diff(prof.k_alpha_prime)) > -1e-6 * scale


def test_ray_slope_limit_geometric_tail():
    t = np.array([4.0, 5.0, 6.0])
    kp = 2.0 - np.exp(-t)
    prof = RayProfile(t, np.zeros(3), kp)
    assert ray_slope_limit(prof) == pytest.approx(2.0, rel=1e-12)
