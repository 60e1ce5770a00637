"""
Discretized constant-curvature surfaces: the flat torus and the round sphere.

Fields are plain ``numpy`` arrays whose shape matches ``geom.shape``. The
Laplacian uses the positive sign convention, so ``Δ₀`` has nonnegative
spectrum and ``ω_φ = ω₀(1 − Δ₀φ)`` for a Kähler potential ``φ``.

Torus fields are collocated on an ``n × n`` periodic grid and every grid
function is representable, so the spectral projection is the identity.
Sphere fields live on Gauss–Legendre × uniform-longitude nodes and are
band-limited to degree ``L``; nonlinear products are projected back with
:meth:`SphereGeometry.project` (Galerkin with exact quadrature).
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft
from scipy import integrate
from scipy.special import erfc

__all__ = [
    "AdmissibilityError",
    "BackgroundGeometry",
    "TorusGeometry",
    "SphereGeometry",
    "build_torus",
    "build_sphere",
    "laplacian_apply",
    "poisson_solve",
    "helmholtz_solve",
    "green_function",
    "green_integral",
    "green_value",
    "conformal_factor",
    "conformal_curvature",
    "dirichlet_pairing",
    "chart_to_unit",
    "write_field",
    "read_field",
    "POSITIVITY_MARGIN",
]

POSITIVITY_MARGIN = 1e-8
FIELD_MAGIC = "vortexlab-field v1"


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("VORTEXLAB_THREADS", "1")))
    except ValueError:
        return 1


class AdmissibilityError(ValueError):
    """A Kähler potential whose conformal factor 1 − Δ₀φ is not positive."""


@dataclass(frozen=True, eq=False)
class BackgroundGeometry:
    """Common interface of the two discretized surfaces.

    Attributes
    ----------
    genus : int
        0 for the sphere, 1 for the torus.
    volume : float
        Total area ``V`` of the background form ω₀.
    shape : tuple of int
        Shape of every grid field on this surface.
    area_weights : ndarray
        Positive quadrature weights summing to ``V``.
    """

    genus: int
    volume: float
    shape: tuple
    area_weights: np.ndarray = field(repr=False)

    @property
    def euler_characteristic(self) -> int:
        return 2 - 2 * self.genus

    @property
    def mean_curvature(self) -> float:
        """⟨S⟩ = 4π(1 − g)/V; also the constant background curvature S₀."""
        return 4.0 * math.pi * (1 - self.genus) / self.volume

    @property
    def resolution(self) -> int:
        raise NotImplementedError

    # -- quadrature ---------------------------------------------------------
    def integrate(self, u) -> float:
        return float(np.sum(self.area_weights * u))

    def mean(self, u) -> float:
        return self.integrate(u) / self.volume

    def inner(self, a, b) -> float:
        return float(np.sum(self.area_weights * a * b))

    def constant(self, value: float = 0.0) -> np.ndarray:
        return np.full(self.shape, float(value))

    def check_field(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if u.shape != self.shape:
            raise ValueError(f"field shape {u.shape} does not match grid {self.shape}")
        return u

    # -- spectral machinery implemented by subclasses -----------------------
    def to_spectral(self, u):
        raise NotImplementedError

    def from_spectral(self, c):
        raise NotImplementedError

    @property
    def eigenvalues(self) -> np.ndarray:
        raise NotImplementedError

    def project(self, u) -> np.ndarray:
        return self.from_spectral(self.to_spectral(u))

    def gradient(self, u):
        """Components of ∇u in an orthonormal frame of the background metric."""
        raise NotImplementedError

    # -- derived operators --------------------------------------------------
    def laplacian(self, u) -> np.ndarray:
        return self.from_spectral(self.eigenvalues * self.to_spectral(u))

    def spectral_solve(self, rhs, shift: float) -> np.ndarray:
        """Solve (Δ₀ + shift) u = rhs; with shift = 0 the mean of u is set to 0."""
        c = self.to_spectral(rhs)
        denom = self.eigenvalues + shift
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(denom > 0, c / np.where(denom > 0, denom, 1.0), 0.0)
        return self.from_spectral(out)

    def grad_dot(self, a, b) -> np.ndarray:
        ga = self.gradient(a)
        gb = ga if a is b else self.gradient(b)
        return ga[0] * gb[0] + ga[1] * gb[1]

    def grad_norm2(self, u) -> np.ndarray:
        g = self.gradient(u)
        return g[0] ** 2 + g[1] ** 2

    def dirichlet(self, a, b) -> float:
        """∫ i∂a∧∂̄b = ½∫ a Δ₀b ω₀ (integration by parts is exact spectrally)."""
        return 0.5 * self.inner(a, self.laplacian(b))

    def distance(self, p) -> np.ndarray:
        """Geodesic distance from the surface point ``p`` to every node."""
        raise NotImplementedError

    def evaluate(self, u, points) -> np.ndarray:
        """Spectral interpolation of ``u`` at arbitrary surface points."""
        raise NotImplementedError

    def integrate_abs(self, u, weight=None) -> float:
        """∫|u|·weight ω₀ (weight must be positive)."""
        w = 1.0 if weight is None else weight
        return self.integrate(np.abs(u) * w)

    def random_field(self, rng, modes: int = 4, amplitude: float = 1.0) -> np.ndarray:
        raise NotImplementedError

    def random_potential(self, rng, modes: int = 4, curvature: float = 0.5) -> np.ndarray:
        """Random smooth Kähler potential with sup|Δ₀φ| = curvature (< 1 keeps it admissible)."""
        u = self.random_field(rng, modes, 1.0)
        return curvature * u / np.max(np.abs(self.laplacian(u)))


# ---------------------------------------------------------------------------
# Flat torus
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TorusGeometry(BackgroundGeometry):
    """Flat torus ``C/(ℓZ + ℓτZ)`` with ℓ² Im τ = V on an n × n grid.

    Node ``(j, k)`` sits at ``ℓ(j/n + k·modulus/n)``.
    """

    modulus: complex = 1j
    n: int = 64
    ell: float = 1.0
    _kx: np.ndarray = field(default=None, repr=False)
    _ky: np.ndarray = field(default=None, repr=False)
    _ds: np.ndarray = field(default=None, repr=False)
    _dt: np.ndarray = field(default=None, repr=False)
    _eig: np.ndarray = field(default=None, repr=False)

    @property
    def resolution(self) -> int:
        return self.n

    @property
    def eigenvalues(self) -> np.ndarray:
        return self._eig

    @property
    def nodes(self) -> np.ndarray:
        j = np.arange(self.n)
        s, t = np.meshgrid(j / self.n, j / self.n, indexing="ij")
        return self.ell * (s + t * self.modulus)

    def to_spectral(self, u):
        return sfft.rfft2(u, workers=_workers())

    def from_spectral(self, c):
        return sfft.irfft2(c, s=self.shape, workers=_workers())

    def project(self, u) -> np.ndarray:
        return np.asarray(u, dtype=float)

    def gradient(self, u):
        c = self.to_spectral(u)
        us = self.from_spectral(self._ds * c)
        ut = self.from_spectral(self._dt * c)
        m = self.modulus
        gx = us / self.ell
        gy = (ut - m.real * us) / (self.ell * m.imag)
        return gx, gy

    def lattice_coords(self, z):
        """Fractional coordinates (s, t) of planar points ``z``."""
        z = np.asarray(z, dtype=complex)
        t = z.imag / (self.ell * self.modulus.imag)
        s = (z.real - t * self.ell * self.modulus.real) / self.ell
        return s, t

    @property
    def injectivity_radius(self) -> float:
        best = math.inf
        for a in range(-2, 3):
            for b in range(-2, 3):
                if a or b:
                    best = min(best, abs(self.ell * (a + b * self.modulus)))
        return 0.5 * best

    def distance(self, p) -> np.ndarray:
        s, t = self.lattice_coords(self.nodes - complex(p))
        s = s - np.round(s)
        t = t - np.round(t)
        best = np.full(self.shape, np.inf)
        for a in (-1, 0, 1):
            for b in (-1, 0, 1):
                z = self.ell * ((s + a) + (t + b) * self.modulus)
                best = np.minimum(best, np.abs(z))
        return best

    def evaluate(self, u, points) -> np.ndarray:
        pts = np.atleast_1d(np.asarray(points, dtype=complex))
        c = sfft.fft2(u) / (self.n * self.n)
        freq = sfft.fftfreq(self.n, 1.0 / self.n)
        s, t = self.lattice_coords(pts)
        out = np.empty(pts.size)
        for lo in range(0, pts.size, 512):
            es = np.exp(2j * np.pi * np.outer(s[lo:lo + 512], freq))
            et = np.exp(2j * np.pi * np.outer(t[lo:lo + 512], freq))
            out[lo:lo + 512] = np.einsum("pa,ab,pb->p", es, c, et).real
        return out

    def random_field(self, rng, modes: int = 4, amplitude: float = 1.0) -> np.ndarray:
        c = np.zeros((self.n, self.n), dtype=complex)
        for a in range(-modes, modes + 1):
            for b in range(-modes, modes + 1):
                if a == 0 and b == 0:
                    continue
                decay = 1.0 / (1.0 + a * a + b * b)
                c[a % self.n, b % self.n] = decay * (rng.standard_normal() + 1j * rng.standard_normal())
        u = sfft.ifft2(c).real
        u -= u.mean()
        return amplitude * u / np.max(np.abs(u))


def build_torus(modulus: complex = 1j, volume: float = 1.0, n: int = 64) -> TorusGeometry:
    """Flat torus of area ``volume`` with the given complex modulus.

    Parameters
    ----------
    modulus : complex
        Lattice modulus τ with Im τ > 0; the lattice is ℓ(Z + τZ).
    volume : float
        Total area V.
    n : int
        Grid size per direction, at least 16.
    """
    modulus = complex(modulus)
    if n < 16:
        raise ValueError("torus grid needs n >= 16")
    if not modulus.imag > 1e-12 or not math.isfinite(modulus.real):
        raise ValueError("degenerate torus modulus: Im(modulus) must be positive")
    if not volume > 0:
        raise ValueError("volume must be positive")
    ell = math.sqrt(volume / modulus.imag)
    a = sfft.fftfreq(n, 1.0 / n)[:, None]
    b = sfft.rfftfreq(n, 1.0 / n)[None, :]
    kx = 2 * np.pi * a / ell + 0 * b
    ky = 2 * np.pi * (b - a * modulus.real) / (ell * modulus.imag)
    eig = kx**2 + ky**2
    nyq_a = np.abs(a) == n // 2 if n % 2 == 0 else np.zeros_like(a, dtype=bool)
    nyq_b = (b == n // 2) if n % 2 == 0 else np.zeros_like(b, dtype=bool)
    ds = np.where(nyq_a, 0.0, 2j * np.pi * a) + 0 * b
    dt = np.where(nyq_b, 0.0, 2j * np.pi * b) + 0 * a
    weights = np.full((n, n), volume / (n * n))
    return TorusGeometry(
        genus=1, volume=float(volume), shape=(n, n), area_weights=weights,
        modulus=modulus, n=n, ell=ell, _kx=kx, _ky=ky, _ds=ds, _dt=dt, _eig=eig,
    )


# ---------------------------------------------------------------------------
# Round sphere
# ---------------------------------------------------------------------------


def _legendre_table(x, L: int, derivative: bool = False):
    """Orthonormal associated Legendre functions P̄[m, l, i] at ``x``.

    Normalized so that ``P̄_l^m(cos θ) e^{imλ}`` is orthonormal on the unit
    sphere. With ``derivative=True`` also returns ∂θ P̄ and P̄/sin θ.
    """
    # The recursions run in extended precision: their rounding error grows
    # linearly in l, and spectral derivatives amplify it by up to L².
    ld = np.longdouble
    x = np.asarray(x, dtype=ld)
    one = ld(1)
    s = np.sqrt(np.maximum(one - x * x, ld(0)))
    P = np.zeros((L + 1, L + 1, x.size), dtype=ld)
    pmm = np.full(x.size, one / np.sqrt(4 * ld(np.pi)))
    for m in range(L + 1):
        if m > 0:
            pmm = pmm * np.sqrt(ld(2 * m + 1) / ld(2 * m)) * s
        P[m, m] = pmm
        if m < L:
            P[m, m + 1] = np.sqrt(ld(2 * m + 3)) * x * pmm
        for l in range(m + 2, L + 1):
            a = np.sqrt(ld(4 * l * l - 1) / ld(l * l - m * m))
            b = np.sqrt(ld((l - 1) ** 2 - m * m) / ld(4 * (l - 1) ** 2 - 1))
            P[m, l] = a * (x * P[m, l - 1] - b * P[m, l - 2])
    if not derivative:
        return P.astype(float)
    dP = np.zeros_like(P)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv_s = np.where(s > 0, one / np.where(s > 0, s, one), ld(0))
    for m in range(L + 1):
        for l in range(m, L + 1):
            term = l * x * P[m, l]
            if l > m:
                c = np.sqrt(ld(2 * l + 1) / ld(2 * l - 1) * ld(l * l - m * m))
                term = term - c * P[m, l - 1]
            dP[m, l] = term * inv_s
    Ps = P * inv_s
    return P.astype(float), dP.astype(float), Ps.astype(float)


def _gauss_legendre(n: int):
    """Gauss–Legendre nodes and weights, polished in extended precision.

    ``numpy.polynomial.legendre.leggauss`` returns weights with relative
    errors near 1e-11 at n ≈ 129, enough to spoil spectral derivatives. Two
    Newton steps on the long-double three-term recurrence restore them.
    """
    x0, _ = np.polynomial.legendre.leggauss(n)
    ld = np.longdouble
    x = x0.astype(ld)
    for _ in range(2):
        p0, p1 = np.ones_like(x), x.copy()
        for k in range(2, n + 1):
            p0, p1 = p1, ((2 * k - 1) * x * p1 - (k - 1) * p0) / k
        dp = n * (x * p1 - p0) / (x * x - 1)
        x = x - p1 / dp
    p0, p1 = np.ones_like(x), x.copy()
    for k in range(2, n + 1):
        p0, p1 = p1, ((2 * k - 1) * x * p1 - (k - 1) * p0) / k
    dp = n * (x * p1 - p0) / (x * x - 1)
    w = 2 / ((1 - x * x) * dp * dp)
    return x.astype(float), w.astype(float)


def chart_to_unit(z) -> np.ndarray:
    """Stereographic chart ``z = tan(θ/2)e^{iλ}`` to a unit vector; z = ∞ is the south pole."""
    if z is None or (isinstance(z, (complex, float, int)) and not np.isfinite(abs(z))):
        return np.array([0.0, 0.0, -1.0])
    z = complex(z)
    r2 = abs(z) ** 2
    if r2 > 1e300:
        return np.array([0.0, 0.0, -1.0])
    return np.array([2 * z.real, 2 * z.imag, 1.0 - r2]) / (1.0 + r2)


@dataclass(frozen=True, eq=False)
class SphereGeometry(BackgroundGeometry):
    """Round sphere of area V, band limit L, on (L+1) Gauss × (2L+2) longitude nodes."""

    L: int = 32
    radius: float = 1.0
    x: np.ndarray = field(default=None, repr=False)
    gauss_weights: np.ndarray = field(default=None, repr=False)
    lon: np.ndarray = field(default=None, repr=False)
    _P: np.ndarray = field(default=None, repr=False)
    _dP: np.ndarray = field(default=None, repr=False)
    _Ps: np.ndarray = field(default=None, repr=False)
    _eig: np.ndarray = field(default=None, repr=False)

    @property
    def resolution(self) -> int:
        return self.L

    @property
    def nlon(self) -> int:
        return self.shape[1]

    @property
    def eigenvalues(self) -> np.ndarray:
        return self._eig

    @property
    def colatitude(self) -> np.ndarray:
        return np.arccos(self.x)

    @property
    def unit_nodes(self) -> np.ndarray:
        th = self.colatitude[:, None]
        lam = self.lon[None, :]
        return np.stack(np.broadcast_arrays(np.sin(th) * np.cos(lam), np.sin(th) * np.sin(lam), np.cos(th)), axis=-1)

    @property
    def chart_nodes(self) -> np.ndarray:
        """Stereographic chart coordinate of every node."""
        th = self.colatitude[:, None]
        return np.tan(th / 2) * np.exp(1j * self.lon[None, :])

    def _fourier(self, u):
        return sfft.rfft(u, axis=-1, workers=_workers())[:, : self.L + 1] * (2 * np.pi / self.nlon)

    def _synth(self, c, table):
        G = np.matmul(table.transpose(0, 2, 1), c.T[:, :, None])[:, :, 0]
        F = np.zeros((table.shape[2], self.nlon // 2 + 1), dtype=complex)
        F[:, : self.L + 1] = G.T * self.nlon
        return sfft.irfft(F, n=self.nlon, axis=-1, workers=_workers())

    def to_spectral(self, u):
        F = self._fourier(u) * self.gauss_weights[:, None]
        return np.matmul(self._P, F.T[:, :, None])[:, :, 0].T

    def from_spectral(self, c):
        return self._synth(c, self._P)

    def gradient(self, u):
        c = self.to_spectral(u)
        m = np.arange(self.L + 1)[None, :]
        gth = self._synth(c, self._dP)
        glam = self._synth(1j * m * c, self._Ps)
        return gth / self.radius, glam / self.radius

    def distance(self, p) -> np.ndarray:
        pu = chart_to_unit(p) if not isinstance(p, np.ndarray) else p
        chord = np.linalg.norm(self.unit_nodes - pu, axis=-1)
        return 2.0 * self.radius * np.arcsin(np.clip(chord / 2, 0.0, 1.0))

    def evaluate_at(self, u, x, lam, coeffs=None) -> np.ndarray:
        """Evaluate band-limited fields at colatitude cosines ``x`` and longitudes ``lam``.

        ``coeffs`` may be a list of coefficient arrays; the result then has one
        row per field.
        """
        many = isinstance(coeffs, (list, tuple))
        cs = list(coeffs) if many else [self.to_spectral(u) if coeffs is None else coeffs]
        x = np.atleast_1d(np.asarray(x, dtype=float))
        lam = np.broadcast_to(np.asarray(lam, dtype=float), x.shape)
        wm = np.where(np.arange(self.L + 1) == 0, 1.0, 2.0)
        C = np.stack([c.T for c in cs], axis=1)  # (m, fields, l)
        out = np.empty((len(cs), x.size))
        chunk = 4096
        for lo in range(0, x.size, chunk):
            P = _legendre_table(x[lo:lo + chunk], self.L)  # (m, l, p)
            G = np.matmul(C.real, P) + 1j * np.matmul(C.imag, P)  # (m, fields, p)
            ph = np.exp(1j * np.outer(np.arange(self.L + 1), lam[lo:lo + chunk])) * wm[:, None]
            out[:, lo:lo + chunk] = np.einsum("mfp,mp->fp", G, ph).real
        return out if many else out[0]

    def evaluate(self, u, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return self.evaluate_at(u, pts[:, 2], np.arctan2(pts[:, 1], pts[:, 0]))

    def integrate_abs(self, u, weight=None, order: int = 24) -> float:
        """∫|u|·weight ω₀ with sign changes resolved column by column.

        Along each quadrature longitude the colatitude interval is split at the
        zeros of ``u`` and each piece is integrated with Gauss–Legendre; the
        longitude sum is spectrally accurate because the column integrals are
        smooth in λ.
        """
        cu = self.to_spectral(u)
        coeffs = [cu] if weight is None else [cu, self.to_spectral(weight)]
        nfine = 4 * (self.L + 1)
        th_f = np.linspace(0.0, np.pi, nfine + 1)
        lam = self.lon
        Pf = _legendre_table(np.cos(th_f), self.L)
        G = np.matmul(cu.T.real[:, None, :], Pf)[:, 0] + 1j * np.matmul(cu.T.imag[:, None, :], Pf)[:, 0]
        F = np.zeros((nfine + 1, self.nlon // 2 + 1), dtype=complex)
        F[:, : self.L + 1] = G.T * self.nlon
        vals = sfft.irfft(F, n=self.nlon, axis=-1)
        gx, gw = np.polynomial.legendre.leggauss(order)
        column_cuts = {}
        for j in range(lam.size):
            col = vals[:, j]
            cuts = [0.0]
            for k in np.nonzero(np.sign(col[:-1]) * np.sign(col[1:]) < 0)[0]:
                lo, hi = max(k - 1, 0), min(k + 3, nfine + 1)
                coef = np.polyfit(th_f[lo:hi] - th_f[k], col[lo:hi], hi - lo - 1)
                h = th_f[k + 1] - th_f[k]
                good = [r.real for r in np.roots(coef) if abs(r.imag) < 1e-9 and -1e-12 <= r.real <= h + 1e-12]
                cuts.append(th_f[k] + (good[0] if good else h * col[k] / (col[k] - col[k + 1])))
            cuts.append(np.pi)
            column_cuts.setdefault(tuple(np.round(cuts, 15)), []).append(j)
        total = 0.0
        for cuts, cols in column_cuts.items():
            th, wt = [], []
            for a, b in zip(cuts[:-1], cuts[1:]):
                if b > a:
                    t = 0.5 * (b - a) * gx + 0.5 * (a + b)
                    th.append(t)
                    wt.append(0.5 * (b - a) * gw * np.sin(t))
            th, wt = np.concatenate(th), np.concatenate(wt)
            TH = np.repeat(th[None, :], len(cols), axis=0).ravel()
            LM = np.repeat(lam[cols][:, None], th.size, axis=1).ravel()
            ev = self.evaluate_at(None, np.cos(TH), LM, coeffs=coeffs)
            vals_q = np.abs(ev[0]) * (ev[1] if weight is not None else 1.0)
            total += float(np.sum(vals_q.reshape(len(cols), th.size) * wt[None, :]))
        return total * (2 * np.pi / lam.size) * self.radius**2

    def random_field(self, rng, modes: int = 4, amplitude: float = 1.0) -> np.ndarray:
        c = np.zeros((self.L + 1, self.L + 1), dtype=complex)
        for l in range(1, modes + 1):
            for m in range(0, l + 1):
                z = rng.standard_normal() + (1j * rng.standard_normal() if m else 0.0)
                c[l, m] = z / (1.0 + l * l)
        u = self.from_spectral(c)
        return amplitude * u / np.max(np.abs(u))


def build_sphere(volume: float = 4 * math.pi, band_limit: int = 32) -> SphereGeometry:
    """Round sphere of total area ``volume`` resolved up to spherical-harmonic degree ``band_limit``."""
    L = int(band_limit)
    if L < 8:
        raise ValueError("sphere band limit must be >= 8")
    if not volume > 0:
        raise ValueError("volume must be positive")
    radius = math.sqrt(volume / (4 * math.pi))
    x, w = _gauss_legendre(L + 1)
    x = x[::-1].copy()  # north to south
    w = w[::-1].copy()
    nlon = 2 * L + 2
    lon = 2 * np.pi * np.arange(nlon) / nlon
    P, dP, Ps = _legendre_table(x, L, derivative=True)
    l = np.arange(L + 1)[:, None]
    eig = (l * (l + 1) / radius**2) * np.ones((1, L + 1))
    weights = radius**2 * w[:, None] * (2 * np.pi / nlon) * np.ones((1, nlon))
    return SphereGeometry(
        genus=0, volume=float(volume), shape=(L + 1, nlon), area_weights=weights,
        L=L, radius=radius, x=x, gauss_weights=w, lon=lon, _P=P, _dP=dP, _Ps=Ps, _eig=eig,
    )


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------


def laplacian_apply(geom: BackgroundGeometry, u) -> np.ndarray:
    """Δ₀u with the positive-spectrum convention."""
    return geom.laplacian(geom.check_field(u))


def poisson_solve(geom: BackgroundGeometry, rhs) -> np.ndarray:
    """Mean-zero solution of Δ₀u = rhs; rhs must integrate to zero."""
    rhs = geom.check_field(rhs)
    scale = geom.integrate(np.abs(rhs)) + 1e-300
    if abs(geom.integrate(rhs)) > 1e-8 * scale:
        raise ValueError("poisson_solve needs a mean-zero right-hand side")
    return geom.spectral_solve(rhs, 0.0)


def helmholtz_solve(geom: BackgroundGeometry, v, rhs, rtol: float = 1e-13) -> np.ndarray:
    """Solve (Δ₀ + v)u = rhs for a nonnegative potential v with positive mass.

    Preconditioned conjugate gradients in the area-weighted inner product,
    with the constant-coefficient operator Δ₀ + mean(v) as preconditioner.
    """
    from scipy.sparse.linalg import LinearOperator, cg

    v = geom.check_field(v) * np.ones(geom.shape)
    rhs = geom.check_field(rhs)
    if np.min(v) < 0:
        raise ValueError("helmholtz potential must be nonnegative")
    vbar = geom.mean(v)
    if not vbar > 1e-14:
        raise ValueError("helmholtz potential must have positive mass")
    if np.ptp(v) <= 1e-14 * vbar:
        return geom.spectral_solve(rhs, vbar)
    return weighted_cg(geom, lambda x: geom.laplacian(x) + geom.project(v * x), rhs,
                       lambda r: geom.spectral_solve(r, vbar), rtol=rtol)


def weighted_cg(geom, apply, rhs, precond, rtol=1e-13, maxiter=2000, x0=None):
    """Conjugate gradients for an operator self-adjoint in the area-weighted pairing."""
    from scipy.sparse.linalg import LinearOperator, cg

    sw = np.sqrt(geom.area_weights).ravel()
    shape = geom.shape
    size = sw.size

    def A(y):
        return sw * apply((y / sw).reshape(shape)).ravel()

    def M(y):
        return sw * precond((y / sw).reshape(shape)).ravel()

    b = sw * geom.project(rhs).ravel()
    y0 = None if x0 is None else sw * x0.ravel()
    y, info = cg(LinearOperator((size, size), matvec=A), b, x0=y0, rtol=rtol, atol=0.0,
                 maxiter=maxiter, M=LinearOperator((size, size), matvec=M))
    return geom.project((y / sw).reshape(shape))


# -- Green function ----------------------------------------------------------


def _cutoff(geom: BackgroundGeometry):
    """Inner/outer radius of the smooth cutoff used for singularity splitting."""
    if isinstance(geom, TorusGeometry):
        r = geom.injectivity_radius
        return 0.2 * r, 0.95 * r
    return 0.15 * np.pi * geom.radius, 0.8 * np.pi * geom.radius


def _chi(d, a, b):
    """erfc-profile cutoff: 1 on [0, a], 0 beyond b, with first two derivatives."""
    rc, sig = 0.5 * (a + b), (b - a) / 12.0
    z = (d - rc) / sig
    inside = np.abs(z) < 6.0
    chi = np.where(z <= -6.0, 1.0, np.where(z >= 6.0, 0.0, 0.5 * erfc(np.clip(z, -6, 6))))
    d1 = np.where(inside, -np.exp(-(z**2)) / (sig * math.sqrt(math.pi)), 0.0)
    d2 = d1 * (-2.0 * z / sig)
    return chi, d1, d2


def _kd_minus_one_over_d2(geom, d):
    """(k·d − 1)/d² where k is the radial mean-curvature term (cot(d/R)/R on the sphere)."""
    if isinstance(geom, TorusGeometry):
        return np.zeros_like(d)
    R = geom.radius
    g = d / R
    small = g < 1e-2
    gs = np.where(small, 1.0, g)
    direct = (gs / np.tan(gs) - 1.0) / (gs * gs)
    series = -1.0 / 3 - g * g / 45 - 2 * g**4 / 945
    return np.where(small, series, direct) / R**2


def _radial_k(geom, d):
    if isinstance(geom, TorusGeometry):
        return 1.0 / d
    R = geom.radius
    return 1.0 / (R * np.tan(d / R))


def _singular_part(geom, d):
    """g = −(1/2π) log d · χ(d) and the smooth density Δ₀g away from the pole."""
    a, b = _cutoff(geom)
    chi, c1, c2 = _chi(d, a, b)
    with np.errstate(divide="ignore", invalid="ignore"):
        logd = np.log(np.where(d > 0, d, 1.0))
        g = -logd * chi / (2 * np.pi)
        k = np.where(d > 0, _radial_k(geom, np.where(d > 0, d, 1.0)), 0.0)
        lap_arg = chi * _kd_minus_one_over_d2(geom, d) + c1 * (2.0 / np.where(d > 0, d, 1.0) + k * logd) + c2 * logd
    s = lap_arg / (2 * np.pi)  # Δ₀g = −(g'' + k g') = (1/2π)[...]
    return g, s


def _point_cell_value(geom, d):
    """Cell average of −(1/2π) log d over the node cell that contains the pole."""
    cell = float(np.max(geom.area_weights))
    rho = math.sqrt(cell / math.pi)
    return -(math.log(rho) - 0.5) / (2 * np.pi)


@dataclass(frozen=True)
class _GreenParts:
    singular: np.ndarray
    remainder: np.ndarray
    constant: float
    pole: object

    @property
    def total(self):
        return self.singular + self.remainder + self.constant


def _green_parts(geom: BackgroundGeometry, p) -> _GreenParts:
    pole = chart_to_unit(p) if isinstance(geom, SphereGeometry) else complex(p)
    d = geom.distance(pole)
    g, s = _singular_part(geom, d)
    at_pole = d < 1e-12
    if np.any(at_pole):
        g = np.where(at_pole, _point_cell_value(geom, d), g)
        s = np.where(at_pole, _kd_minus_one_over_d2(geom, np.zeros(1))[0] / (2 * np.pi), s)
    rhs = -1.0 / geom.volume - s
    rhs = rhs - geom.mean(rhs)
    rem = geom.spectral_solve(rhs, 0.0)
    # the remainder has zero mean spectrally; the singular part is integrated
    # radially so that the normalization does not inherit grid quadrature error
    const = -(_singular_integral(geom) + geom.integrate(rem)) / geom.volume
    return _GreenParts(g, rem, const, pole)


def _singular_integral(geom: BackgroundGeometry) -> float:
    """∫ −(1/2π) log d · χ(d) ω₀ by adaptive radial quadrature."""
    a, b = _cutoff(geom)
    if isinstance(geom, TorusGeometry):
        jac = lambda r: r  # noqa: E731
    else:
        jac = lambda r: geom.radius * math.sin(r / geom.radius)  # noqa: E731

    def dens(r):
        return -math.log(r) * float(_chi(np.array([r]), a, b)[0][0]) * jac(r)

    inner, _ = integrate.quad(dens, 0.0, a, limit=200, epsabs=1e-14, epsrel=1e-13)
    outer, _ = integrate.quad(dens, a, b, limit=200, epsabs=1e-14, epsrel=1e-13)
    return inner + outer


def green_function(geom: BackgroundGeometry, p) -> np.ndarray:
    """G(p, ·) with Δ₀G = δ_p − 1/V, ∫G ω₀ = 0 and G ~ −(1/2π) log d near p.

    ``p`` is a planar point (torus) or a chart coordinate, possibly ``inf``
    (sphere). Off-grid poles are handled exactly by the analytic split; a pole
    sitting on a node receives the cell average of the logarithm.
    """
    return _green_parts(geom, p).total


def green_value(geom: BackgroundGeometry, p, q) -> float:
    """G(p, q) at an arbitrary point q ≠ p (the singular part is evaluated analytically)."""
    parts = _green_parts(geom, p)
    if isinstance(geom, TorusGeometry):
        s, t = geom.lattice_coords(complex(q) - parts.pole)
        s, t = s - np.round(s), t - np.round(t)
        d = min(abs(geom.ell * ((s + a) + (t + b) * geom.modulus)) for a in (-1, 0, 1) for b in (-1, 0, 1))
        qq = [complex(q)]
    else:
        qu = chart_to_unit(q)
        chord = np.linalg.norm(qu - parts.pole)
        d = 2.0 * geom.radius * math.asin(min(chord / 2, 1.0))
        qq = [qu]
    g, _ = _singular_part(geom, np.array([d]))
    return float(g[0] + geom.evaluate(parts.remainder, qq)[0] + parts.constant)


def _polar_rule(geom, nr: int = 48, nth: int = 64):
    a, b = _cutoff(geom)
    x, w = np.polynomial.legendre.leggauss(nr)
    # r = a·s² on [0, a] absorbs the r·log r endpoint behaviour
    s = 0.5 * (x + 1)
    r1, w1 = a * s * s, a * 2 * s * 0.5 * w
    r2, w2 = a + (b - a) * 0.5 * (x + 1), 0.5 * (b - a) * w
    r = np.concatenate([r1, r2])
    wr = np.concatenate([w1, w2])
    th = 2 * np.pi * np.arange(nth) / nth
    return r, wr, th, 2 * np.pi / nth


def green_integral(geom: BackgroundGeometry, p, rhs) -> float:
    """∫ G(p,·) rhs ω₀ with the logarithmic singularity integrated in polar coordinates."""
    parts = _green_parts(geom, p)
    rhs = geom.check_field(rhs)
    smooth = geom.inner(parts.remainder + parts.constant, rhs)
    r, wr, th, wth = _polar_rule(geom)
    a, b = _cutoff(geom)
    chi, _, _ = _chi(r, a, b)
    gr = -np.log(r) * chi / (2 * np.pi)
    R, TH = np.meshgrid(r, th, indexing="ij")
    if isinstance(geom, TorusGeometry):
        pts = parts.pole + R * np.exp(1j * TH)
        vals = geom.evaluate(rhs, pts.ravel()).reshape(R.shape)
        jac = r
    else:
        pole = parts.pole
        e1 = np.cross(pole, [0.0, 0.0, 1.0])
        if np.linalg.norm(e1) < 1e-8:
            e1 = np.array([1.0, 0.0, 0.0])
        e1 /= np.linalg.norm(e1)
        e2 = np.cross(pole, e1)
        gam = R / geom.radius
        dirs = np.cos(TH)[..., None] * e1 + np.sin(TH)[..., None] * e2
        pts = np.cos(gam)[..., None] * pole + np.sin(gam)[..., None] * dirs
        vals = geom.evaluate(rhs, pts.reshape(-1, 3)).reshape(R.shape)
        jac = geom.radius * np.sin(r / geom.radius)
    sing = float(np.sum((gr * jac * wr)[:, None] * vals) * wth)
    return smooth + sing


# -- conformal geometry ------------------------------------------------------


def conformal_factor(geom: BackgroundGeometry, kpot) -> np.ndarray:
    """Ω = ω_φ/ω₀ = 1 − Δ₀φ; raises when Ω falls below the positivity margin."""
    kpot = geom.check_field(kpot)
    omega = 1.0 - geom.laplacian(kpot)
    if np.min(omega) < POSITIVITY_MARGIN:
        raise AdmissibilityError(f"nonpositive conformal factor: min(1 - Δ₀φ) = {np.min(omega):.3e}")
    return omega


def conformal_curvature(geom: BackgroundGeometry, kpot) -> np.ndarray:
    """Gaussian curvature S of ω_φ = ω₀(1 − Δ₀φ): S = e^{−2u}(S₀ + Δ₀u), u = ½ log(1 − Δ₀φ)."""
    omega = conformal_factor(geom, kpot)
    u = 0.5 * np.log(omega)
    return (geom.mean_curvature + geom.laplacian(u)) / omega


def dirichlet_pairing(geom: BackgroundGeometry, a, b) -> float:
    """∫ i∂a∧∂̄b = ½∫⟨∇a, ∇b⟩₀ ω₀."""
    return geom.dirichlet(geom.check_field(a), geom.check_field(b))


# -- field dumps -------------------------------------------------------------


def write_field(path, geom: BackgroundGeometry, u) -> None:
    """Write a field dump: header line then one value per line, row-major, 17 digits."""
    u = geom.check_field(u)
    lines = [f"{FIELD_MAGIC} {geom.genus} {geom.resolution} {geom.volume:.17g}"]
    lines.extend(f"{v:.17g}" for v in u.ravel())
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_field(path, geom: BackgroundGeometry | None = None):
    """Read a field dump; returns ``(values, header)`` and checks it against ``geom``."""
    with open(path) as fh:
        head = fh.readline().split()
        values = np.array([float(tok) for tok in fh.read().split()])
    if " ".join(head[:2]) != FIELD_MAGIC or len(head) != 5:
        raise ValueError(f"{path}: not a vortexlab field dump")
    header = {"genus": int(head[2]), "resolution": int(head[3]), "volume": float(head[4])}
    if geom is not None:
        if (header["genus"], header["resolution"]) != (geom.genus, geom.resolution):
            raise ValueError(f"{path}: field was written for a different grid")
        if abs(header["volume"] - geom.volume) > 1e-12 * geom.volume:
            raise ValueError(f"{path}: field was written for a different volume")
        values = values.reshape(geom.shape)
    return values, header
