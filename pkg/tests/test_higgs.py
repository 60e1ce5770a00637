import math

import numpy as np
import pytest

from vortexlab.higgs import (
    U0_FLOOR,
    Divisor,
    build_higgs_explicit_sphere,
    build_higgs_green,
    parse_divisor,
    pullback_higgs,
)
from vortexlab.surface import build_sphere, build_torus, chart_to_unit


def test_parse_divisor_lines():
    d = parse_divisor("0 0 2\n1.5 -0.5 1  # comment\ninf 3\n")
    assert d.degree == 6
    assert d.max_multiplicity == 3
    assert d.multiplicity_at(math.inf) == 3
    assert d.multiplicity_at(1.5 - 0.5j) == 1
    assert d.multiplicity_at(7) == 0


@pytest.mark.parametrize("text", ["", "0 0", "inf", "0 0 0", "1 1 1\n1 1 2"])
def test_parse_divisor_rejects(text):
    with pytest.raises(ValueError):
        parse_divisor(text)


def test_divisor_rejects_coincident_points():
    with pytest.raises(ValueError):
        Divisor((1 + 1j, 1 + 1j), (1, 1))
    with pytest.raises(ValueError):
        Divisor((math.inf, complex(math.inf, 0)), (1, 2))


def test_green_higgs_normalization_and_slope():
    """sup u0 = 0 on the grid and u0 ≈ 2n log d near the zero."""
    g = build_torus(1j, 30.0, 128)
    p = 0.51 + 0.47j
    h = build_higgs_green(g, Divisor((p,), (1,)))
    assert np.max(h.u0) == 0.0
    assert h.curvature_density == pytest.approx(2 * math.pi / 30.0)
    d = g.distance(p)
    near = (d > 0.1) & (d < 0.6)
    slope = np.polyfit(np.log(d[near]), h.u0[near], 1)[0]
    assert slope == pytest.approx(2.0, abs=0.1)


def test_double_zero_slope_on_sphere():
    g = build_sphere(50.0, 64)
    h = build_higgs_explicit_sphere(g, Divisor((0.2 + 0.1j, -1.0), (2, 1)))
    X = g.unit_nodes
    R = g.radius
    chord = np.linalg.norm(X - chart_to_unit(0.2 + 0.1j), axis=-1) * R
    near = (chord > 0.05 * R) & (chord < 0.2 * R)
    slope = np.polyfit(np.log(chord[near]), h.u0[near], 1)[0]
    assert slope == pytest.approx(4.0, rel=0.05)


def test_explicit_matches_green_on_sphere():
    """Chart formula and Green construction differ by a constant only."""
    g = build_sphere(50.0, 64)
    d = Divisor((0.3 + 0.2j, -1.1 + 0.4j, math.inf), (1, 2, 1))
    a = build_higgs_explicit_sphere(g, d).u0
    b = build_higgs_green(g, d).u0
    live = (a > -30) & (b > -30)
    diff = a[live] - b[live]
    assert np.ptp(diff) < 1e-4
    assert np.max(np.exp(a)) == 1.0


def test_balanced_pair_axisymmetric_equator_max():
    g = build_sphere(50.0, 32)
    h = build_higgs_explicit_sphere(g, Divisor((0, math.inf), (1, 1)))
    assert np.max(np.ptp(h.u0, axis=1)) < 1e-12
    row = np.argmax(h.u0[:, 0])
    assert abs(g.x[row]) == pytest.approx(np.min(np.abs(g.x)))


def test_zero_at_divisor_node_uses_floor():
    g = build_torus(1j, 1.0, 16)
    h = build_higgs_green(g, Divisor((0j,), (1,)))
    assert h.u0[0, 0] == U0_FLOOR
    assert 0.0 <= h.density[0, 0] < 1e-300
    assert np.all(np.isfinite(h.u0))


def test_curvature_degree():
    g = build_torus(0.3 + 1.2j, 12.0, 32)
    h = build_higgs_green(g, Divisor((1.0 + 1.0j, 2.0 + 0.5j), (1, 2)))
    assert g.integrate(g.constant(h.curvature_density)) == pytest.approx(2 * math.pi * 3, rel=1e-13)


def test_pullback_identity_and_limit():
    g = build_sphere(50.0, 32)
    h = build_higgs_explicit_sphere(g, Divisor((0, 1, -1j), (1, 1, 1)))
    assert np.array_equal(pullback_higgs(h, 0.0).u0, h.u0)
    far = pullback_higgs(h, 10.0)
    assert far.degree == 3
    pts = [p for p in far.divisor.points if p != 0]
    assert all(abs(1 / p) < 1e-6 for p in pts)
    with pytest.raises(OverflowError):
        pullback_higgs(h, 31.0)


def test_rotation_equivariance():
    """Rotating the divisor about the polar axis rotates u0."""
    g = build_sphere(50.0, 32)
    shift = 3  # nodes of longitude
    ang = 2 * math.pi * shift / g.nlon
    pts = (0.4 + 0.3j, -0.7 + 0.1j)
    a = build_higgs_explicit_sphere(g, Divisor(pts, (1, 2))).u0
    b = build_higgs_explicit_sphere(g, Divisor(tuple(p * complex(math.cos(ang), math.sin(ang)) for p in pts), (1, 2))).u0
    assert np.max(np.abs(np.roll(a, shift, axis=1) - b)) < 1e-6


def test_torus_rejects_infinity():
    with pytest.raises(ValueError):
        build_higgs_green(build_torus(1j, 1.0, 16), Divisor((math.inf,), (1,)))
