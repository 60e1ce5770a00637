import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vortexlab.surface import (
    AdmissibilityError,
    build_sphere,
    build_torus,
    chart_to_unit,
    conformal_curvature,
    conformal_factor,
    green_function,
    green_integral,
    green_value,
    helmholtz_solve,
    poisson_solve,
    read_field,
    write_field,
)


@pytest.fixture(scope="module")
def torus16():
    return build_torus(1j, 1.0, 16)


@pytest.fixture(scope="module")
def torus128():
    return build_torus(0.2 + 1.1j, 30.0, 128)


@pytest.fixture(scope="module")
def sphere32():
    return build_sphere(50.0, 32)


def test_torus_dense_laplacian_spectrum(torus16):
    """Dense n=16 Laplacian: symmetric in the area inner product, spectrum 4π²|k|² on the square torus."""
    g = torus16
    n = g.n
    A = np.zeros((n * n, n * n))
    for j in range(n * n):
        e = np.zeros(n * n)
        e[j] = 1.0
        A[:, j] = g.laplacian(e.reshape(g.shape)).ravel()
    assert np.allclose(A, A.T, atol=1e-10)
    ev = np.sort(np.linalg.eigvalsh(0.5 * (A + A.T)))
    k = np.fft.fftfreq(n, 1.0 / n)
    a, b = np.meshgrid(k, k, indexing="ij")
    lam = 4 * math.pi**2 * (a**2 + b**2)
    assert np.allclose(ev, np.sort(lam.ravel()), atol=1e-8 * lam.max())


def test_torus_fd_oracle_on_smooth_field(torus16):
    """Spectral Laplacian of a trigonometric field vs a 4th-order FD stencil refined to n=256."""
    g = build_torus(1j, 1.0, 256)
    s = np.arange(g.n) / g.n
    X, Y = np.meshgrid(s, s, indexing="ij")
    u = np.sin(2 * math.pi * X) * np.cos(4 * math.pi * Y) + 0.3 * np.cos(2 * math.pi * (X + Y))
    h = 1.0 / g.n

    def d2(v, ax):
        return (-np.roll(v, 2, ax) + 16 * np.roll(v, 1, ax) - 30 * v + 16 * np.roll(v, -1, ax) - np.roll(v, -2, ax)) / (12 * h * h)

    fd = -(d2(u, 0) + d2(u, 1))
    assert np.max(np.abs(g.laplacian(u) - fd)) < 1e-5 * np.max(np.abs(fd))


def test_torus_lowest_eigenvalue(torus16):
    """First nonzero eigenvalue of the unit square torus is 4π²."""
    ev = np.unique(np.round(torus16.eigenvalues.ravel(), 8))
    assert ev[0] == 0.0
    assert ev[1] == pytest.approx(4 * math.pi**2, rel=1e-9)


def test_sphere_degree_one_eigenfunction(sphere32):
    """z-coordinate is an eigenfunction with eigenvalue 2/R²."""
    g = sphere32
    z = g.unit_nodes[..., 2]
    R2 = g.volume / (4 * math.pi)
    assert np.max(np.abs(g.laplacian(z) - 2 / R2 * z)) < 1e-10


def test_quadrature_totals(torus128, sphere32):
    for g in (torus128, sphere32):
        assert g.integrate(g.constant(1.0)) == pytest.approx(g.volume, rel=1e-13)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), genus=st.sampled_from([0, 1]))
def test_poisson_roundtrip(seed, genus):
    """Δ₀ poisson_solve(r) = r for mean-zero r, and ∫Δ₀u = 0."""
    g = build_torus(1j, 7.0, 32) if genus else build_sphere(9.0, 16)
    rng = np.random.default_rng(seed)
    r = g.random_field(rng, 4, 1.0)
    r -= g.mean(r)
    u = poisson_solve(g, r)
    assert np.max(np.abs(g.laplacian(u) - r)) < 1e-10 * (1 + np.max(np.abs(r)))
    assert abs(g.integrate(g.laplacian(u))) < 1e-10


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_dirichlet_symmetric_nonnegative(seed):
    g = build_torus(0.4 + 0.9j, 5.0, 32)
    rng = np.random.default_rng(seed)
    a, b = g.random_field(rng, 4, 1.0), g.random_field(rng, 4, 1.0)
    assert g.dirichlet(a, b) == pytest.approx(g.dirichlet(b, a), rel=1e-10, abs=1e-12)
    assert g.dirichlet(a, a) >= 0
    assert 2 * g.dirichlet(a, a) == pytest.approx(g.integrate(g.grad_norm2(a)), rel=1e-10)


def test_poisson_requires_mean_zero(torus16):
    with pytest.raises(ValueError):
        poisson_solve(torus16, torus16.constant(1.0))


def test_helmholtz_variable_potential(torus16):
    g = torus16
    rng = np.random.default_rng(1)
    v = 1.0 + 0.5 * np.abs(g.random_field(rng, 3, 1.0))
    u = g.random_field(rng, 3, 1.0)
    rhs = g.laplacian(u) + v * u
    assert np.max(np.abs(helmholtz_solve(g, v, rhs) - u)) < 1e-9


def _theta_green(g, p, pts):
    """−(1/2π)log|θ₁(πz/ℓ | τ)| + (Im z)²/(2V), up to an additive constant."""
    q = mpmath.exp(1j * mpmath.pi * g.modulus)
    out = []
    for z in pts:
        w = complex(z - p)
        th = mpmath.jtheta(1, mpmath.pi * w / g.ell, q)
        out.append(float(-mpmath.log(abs(th)) / (2 * mpmath.pi) + w.imag**2 / (2 * g.volume)))
    return np.array(out)


def test_torus_green_matches_theta_oracle(torus128):
    """Green function at n=128 equals the theta-function formula up to a constant."""
    g = torus128
    p = 1.3 + 0.7j
    G = green_function(g, p)
    rng = np.random.default_rng(5)
    idx = rng.integers(0, g.n, size=(40, 2))
    nodes = g.nodes[idx[:, 0], idx[:, 1]]
    keep = g.distance(p)[idx[:, 0], idx[:, 1]] > 0.05
    diff = G[idx[:, 0], idx[:, 1]][keep] - _theta_green(g, p, nodes[keep])
    assert np.ptp(diff) < 1e-9


def test_sphere_green_closed_form():
    """G(p,x) = −(1/4π)log(1 − cos γ) + (log 2 − 1)/(4π) on the round sphere."""
    g = build_sphere(50.0, 64)
    p = 0.3 + 0.2j
    ex = (-np.log(1 - g.unit_nodes @ chart_to_unit(p)) + math.log(2) - 1) / (4 * math.pi)
    assert np.max(np.abs(green_function(g, p) - ex)) < 1e-12


def test_green_value_off_grid(torus128):
    g = torus128
    p, q = 1.3 + 0.7j, 2.9 + 3.1j
    ref = _theta_green(g, p, [q, 1.3 + 2.0j])
    val = np.array([green_value(g, p, q), green_value(g, p, 1.3 + 2.0j)])
    assert (val - ref)[0] == pytest.approx((val - ref)[1], abs=1e-9)


def test_green_integral_matches_poisson(torus128, sphere32):
    """∫G(p,·)r = u(p) for Δ₀u = r, mean-zero u."""
    rng = np.random.default_rng(2)
    for g, p, pt in ((torus128, 1.3 + 0.7j, [1.3 + 0.7j]), (sphere32, 0.4 - 0.1j, [chart_to_unit(0.4 - 0.1j)])):
        r = g.random_field(rng, 3, 1.0)
        r -= g.mean(r)
        u = poisson_solve(g, r)
        assert green_integral(g, p, r) == pytest.approx(float(g.evaluate(u, pt)[0]), abs=1e-10)


def test_green_mean_zero_normalization():
    """∫G = 0 is imposed analytically; the node sum of G only approaches it as the cell size shrinks."""
    sums = []
    for L in (32, 128):
        g = build_sphere(50.0, L)
        sums.append(abs(g.integrate(green_function(g, 0.1 + 0.5j))))
    assert sums[1] < sums[0] / 10
    assert sums[1] < 1e-4
    t = build_torus(1j, 30.0, 256)
    assert abs(t.integrate(green_function(t, 0.5 + 0.5j))) < 1e-4


def test_conformal_factor_rejects_inadmissible(torus16):
    g = torus16
    u = np.cos(2 * math.pi * np.arange(g.n) / g.n)[:, None] * np.ones(g.shape)
    with pytest.raises(AdmissibilityError):
        conformal_factor(g, -2.0 * u / (4 * math.pi**2))


def test_conformal_curvature_fs_potential():
    """A Fubini–Study pullback potential has constant curvature 4π/V."""
    g = build_sphere(50.0, 32)
    x = g.unit_nodes[..., 2]
    t = 0.3
    R2 = g.volume / (4 * math.pi)
    phi = R2 * (np.log(((1 + x) + math.exp(4 * t) * (1 - x)) / 2) - 2 * t)
    S = conformal_curvature(g, phi)
    assert np.ptp(S) < 1e-6
    assert np.mean(S) == pytest.approx(4 * math.pi / g.volume, rel=1e-6)


def test_field_dump_roundtrip(tmp_path, torus16, sphere32):
    rng = np.random.default_rng(0)
    for g in (torus16, sphere32):
        u = g.random_field(rng, 3, 1.0)
        path = tmp_path / f"u{g.genus}.field"
        write_field(path, g, u)
        back, header = read_field(path, g)
        assert np.array_equal(back, u)
        assert header["genus"] == g.genus
    with pytest.raises(ValueError):
        read_field(tmp_path / "u1.field", sphere32)
