"""
Reference Higgs data built from an effective divisor.

The reference metric ``h₀`` on the degree-N line bundle has constant
curvature ``iF_{h₀} = (2πN/V)ω₀``. Its pointwise norm of the section is

    u₀ = log|φ|²_{h₀} = −4π Σ n_j G(p_j, ·) + C,

with ``C`` chosen so that the grid supremum of ``u₀`` is zero. Everything
downstream uses the density ``ρ₀ = e^{u₀}``; ``u₀`` itself is floored at
``U0_FLOOR`` where the section vanishes on a node.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .surface import (
    BackgroundGeometry,
    SphereGeometry,
    TorusGeometry,
    chart_to_unit,
    green_function,
)

__all__ = [
    "Divisor",
    "HiggsData",
    "U0_FLOOR",
    "build_higgs_green",
    "build_higgs_explicit_sphere",
    "pullback_higgs",
    "parse_divisor",
]

U0_FLOOR = -745.0
INF = complex(math.inf, 0.0)


def _is_inf(p) -> bool:
    return not np.isfinite(abs(complex(p)))


@dataclass(frozen=True)
class Divisor:
    """Effective divisor ``Σ n_j p_j`` with points given as complex chart coordinates.

    On the sphere a point may be ``inf`` (the pole of the chart). On the torus
    points are planar coordinates, identified modulo the lattice.
    """

    points: tuple
    multiplicities: tuple

    def __post_init__(self):
        pts = tuple(complex(p) if not _is_inf(p) else INF for p in self.points)
        mult = tuple(int(m) for m in self.multiplicities)
        if len(pts) != len(mult) or not pts:
            raise ValueError("divisor needs one multiplicity per point and at least one point")
        if any(m < 1 for m in mult):
            raise ValueError("divisor multiplicities must be positive integers")
        for i in range(len(pts)):
            for j in range(i):
                if (_is_inf(pts[i]) and _is_inf(pts[j])) or (
                    not _is_inf(pts[i]) and not _is_inf(pts[j]) and abs(pts[i] - pts[j]) < 1e-12
                ):
                    raise ValueError("coincident divisor points: merge them into one multiplicity")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "multiplicities", mult)

    @property
    def degree(self) -> int:
        return sum(self.multiplicities)

    @property
    def max_multiplicity(self) -> int:
        return max(self.multiplicities)

    def multiplicity_at(self, p) -> int:
        for q, m in zip(self.points, self.multiplicities):
            if (_is_inf(p) and _is_inf(q)) or (not _is_inf(p) and not _is_inf(q) and abs(complex(p) - q) < 1e-12):
                return m
        return 0

    @classmethod
    def from_pairs(cls, pairs):
        pts, mult = zip(*pairs)
        return cls(tuple(pts), tuple(mult))


def parse_divisor(text: str) -> Divisor:
    """Parse lines ``x y multiplicity`` (or ``inf multiplicity``) into a Divisor."""
    pairs = []
    for raw in text.strip().splitlines():
        tok = raw.split("#", 1)[0].split()
        if not tok:
            continue
        if tok[0].lower() == "inf":
            if len(tok) != 2:
                raise ValueError(f"bad divisor line {raw!r}: expected 'inf multiplicity'")
            pairs.append((INF, int(tok[1])))
        else:
            if len(tok) != 3:
                raise ValueError(f"bad divisor line {raw!r}: expected 'x y multiplicity'")
            pairs.append((complex(float(tok[0]), float(tok[1])), int(tok[2])))
    if not pairs:
        raise ValueError("empty divisor")
    return Divisor.from_pairs(pairs)


@dataclass(frozen=True, eq=False)
class HiggsData:
    """Reference Higgs data on a fixed background.

    Attributes
    ----------
    geom : BackgroundGeometry
    divisor : Divisor
    u0 : ndarray
        ``log|φ|²_{h₀}``, sup-normalized, floored at ``U0_FLOOR``.
    curvature_density : float
        Density 2πN/V of iF_{h₀} against ω₀.
    shift : float
        The additive constant C in ``u₀ = −4πΣ n_j G(p_j,·) + C``.
    """

    geom: BackgroundGeometry = field(repr=False)
    divisor: Divisor
    u0: np.ndarray = field(repr=False)
    curvature_density: float
    shift: float

    @property
    def degree(self) -> int:
        return self.divisor.degree

    @property
    def density(self) -> np.ndarray:
        """ρ₀ = |φ|²_{h₀} = e^{u₀}."""
        return np.exp(self.u0)

    def integrate_u0(self) -> float:
        """∫u₀ ω₀, exact for the Green construction since each G(p,·) has zero mean."""
        return self.shift * self.geom.volume


def _finish(geom, divisor, raw, at_zero):
    raw = np.where(at_zero, -np.inf, raw)
    shift = -float(np.max(raw))
    u0 = np.maximum(raw + shift, U0_FLOOR)
    return HiggsData(geom, divisor, u0, 2 * math.pi * divisor.degree / geom.volume, shift)


def build_higgs_green(geom: BackgroundGeometry, divisor: Divisor) -> HiggsData:
    """u₀ = −4π Σ n_j G(p_j, ·) + C with C making the grid supremum zero."""
    raw = np.zeros(geom.shape)
    at_zero = np.zeros(geom.shape, dtype=bool)
    for p, n in zip(divisor.points, divisor.multiplicities):
        if isinstance(geom, TorusGeometry) and _is_inf(p):
            raise ValueError("the torus has no point at infinity")
        raw -= 4 * math.pi * n * green_function(geom, p)
        pole = chart_to_unit(p) if isinstance(geom, SphereGeometry) else p
        at_zero |= geom.distance(pole) < 1e-12
    return _finish(geom, divisor, raw, at_zero)


def build_higgs_explicit_sphere(geom: BackgroundGeometry, divisor: Divisor) -> HiggsData:
    """u₀ = Σ 2n_j log|z − p_j| − N log(1+|z|²) + C, written with chordal distances.

    In homogeneous form each factor is ``|z − p|²/((1+|z|²)(1+|p|²)) = |x − x_p|²/4``
    for the unit vectors ``x``, ``x_p``, which also covers ``p = ∞``.
    """
    if not isinstance(geom, SphereGeometry):
        raise ValueError("build_higgs_explicit_sphere needs a sphere geometry")
    X = geom.unit_nodes
    raw = np.zeros(geom.shape)
    at_zero = np.zeros(geom.shape, dtype=bool)
    for p, n in zip(divisor.points, divisor.multiplicities):
        d2 = np.sum((X - chart_to_unit(p)) ** 2, axis=-1)
        hit = d2 < 1e-24
        at_zero |= hit
        with np.errstate(divide="ignore"):
            raw += n * np.log(np.where(hit, 1.0, d2 / 4.0))
    return _finish(geom, divisor, raw, at_zero)


def pullback_higgs(higgs: HiggsData, t: float, explicit: bool = True) -> HiggsData:
    """Higgs data of the divisor moved by the flow ``z ↦ e^{2t}z``.

    Points at 0 and ∞ are fixed; every other point is scaled by ``e^{2t}`` in
    the chart. The flowed data is rebuilt and sup-normalized.
    """
    if not isinstance(higgs.geom, SphereGeometry):
        raise ValueError("pullback_higgs needs a sphere geometry")
    if abs(t) > 30:
        raise OverflowError("pullback_higgs: |t| > 30 overflows the chart scaling")
    scale = math.exp(2 * t)
    pts = tuple(p if _is_inf(p) else p * scale for p in higgs.divisor.points)
    div = Divisor(pts, higgs.divisor.multiplicities)
    build = build_higgs_explicit_sphere if explicit else build_higgs_green
    return build(higgs.geom, div)
