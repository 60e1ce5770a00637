"""
Geodesics in the space of Kähler potentials on the round sphere.

* The 1-PS ray generated by ``z ↦ e^{2t}z``:
  ``φ_t = (V/4π)(log((1+e^{4t}|z|²)/(1+|z|²)) − 2t) + bt``, an exact geodesic.
* Axisymmetric ε-geodesics ``(φ″ − |dφ′|²_{ω_φ})ω_φ = εω₀`` solved by
  space-time Newton on the colatitude Gauss nodes.
* Path lengths ``∫∫|φ̇|ω_φ dt`` and K_α profiles along rays.

With ``x = cos θ`` (θ the colatitude, z = tan(θ/2)e^{iλ}) every ray quantity
is a closed-form function of ``x``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy import integrate
from scipy.interpolate import CubicSpline
from scipy.sparse.linalg import spsolve

from .energy import k_alpha_reduced, m_alpha_reduced
from .higgs import HiggsData, pullback_higgs
from .surface import SphereGeometry, _legendre_table, conformal_factor
from .vortex import VortexProblem, hermitian_curvature, solve_vortex

__all__ = [
    "OnePSRay",
    "EpsilonGeodesic",
    "RayProfile",
    "fs_ray_potential",
    "geodesic_residual_field",
    "geodesic_residual",
    "solve_epsilon_geodesic",
    "m_alpha_along",
    "d1_path_length",
    "ray_k_alpha_profile",
    "ray_slope_limit",
    "radial_abs_integral",
]


def _require_sphere(geom):
    if not isinstance(geom, SphereGeometry):
        raise ValueError("this operation needs a sphere geometry")


@dataclass(frozen=True)
class OnePSRay:
    """The geodesic ray of the holomorphic field Re(4z∂/∂z), shifted by ``b·t``."""

    volume: float
    b: float = 0.0

    def _log_mix(self, x, t):
        # log(((1+x) + e^{4t}(1−x))/2), evaluated without overflow
        x = np.asarray(x, dtype=float)
        if t >= 0:
            return 4 * t + np.log((np.exp(-4 * t) * (1 + x) + (1 - x)) / 2)
        return np.log(((1 + x) + np.exp(4 * t) * (1 - x)) / 2)

    def potential_x(self, x, t):
        """φ_t as a function of x = cos θ."""
        return self.volume / (4 * math.pi) * (self._log_mix(x, t) - 2 * t) + self.b * t

    def velocity_x(self, x, t):
        """φ̇_t = (V/4π)(4e^{4t}|z|²/(1+e^{4t}|z|²) − 2) + b."""
        x = np.asarray(x, dtype=float)
        frac = 1.0 / (1.0 + np.exp(self._log1(x) - 4 * t))
        return self.volume / (4 * math.pi) * (4 * frac - 2) + self.b

    @staticmethod
    def _log1(x):
        # log((1+x)/(1−x)) = −log|z|², guarded at the poles
        with np.errstate(divide="ignore"):
            return np.log1p(x) - np.log1p(-x)

    def omega_x(self, x, t):
        """Conformal factor ω_{φ_t}/ω₀ = e^{4t}(1+|z|²)²/(1+e^{4t}|z|²)², the pullback of ω₀."""
        x = np.asarray(x, dtype=float)
        return np.exp(4 * t - 2 * self._log_mix(x, t))

    def _grid_x(self, geom):
        _require_sphere(geom)
        return np.broadcast_to(geom.x[:, None], geom.shape)

    def potential(self, geom, t):
        return np.array(self.potential_x(self._grid_x(geom), t))

    def velocity(self, geom, t):
        return np.array(self.velocity_x(self._grid_x(geom), t))

    def conformal_factor(self, geom, t):
        return np.array(self.omega_x(self._grid_x(geom), t))

    def k_energy(self, t: float) -> float:
        """K(φ_t) by adaptive quadrature in x (resolves the concentrating cap for any t)."""
        V = self.volume
        R2 = V / (4 * math.pi)
        S = 4 * math.pi / V
        cap = float(np.tanh(2 * t)) if t != 0 else 0.0

        def dens(x):
            om = self.omega_x(x, t)
            return 0.5 * om * math.log(om) + 0.5 * S * self.potential_x(x, t) * (om - 1.0)

        pts = [cap] if abs(cap) < 1 else None
        val, _ = integrate.quad(dens, -1.0, 1.0, points=pts, limit=400, epsabs=1e-12, epsrel=1e-12)
        return 2 * math.pi * R2 * val


def fs_ray_potential(geom, t: float, b: float = 0.0) -> np.ndarray:
    """φ_t = (V/4π)(log((1+e^{4t}|z|²)/(1+|z|²)) − 2t) + bt on the sphere grid."""
    _require_sphere(geom)
    return OnePSRay(geom.volume, b).potential(geom, t)


def geodesic_residual_field(geom, samples, dt: float) -> np.ndarray:
    """Pointwise ``φ̈ − |dφ̇|²_{ω_φ}`` at the middle of three samples spaced ``dt``.

    ``|dφ̇|²_{ω_φ} = |∇₀φ̇|²/Ω``, the form in which affine paths give
    ``−|∇φ₁|²/Ω`` and the automorphism rays give zero.
    """
    a, m, c = (geom.check_field(s) for s in samples)
    acc = (a - 2 * m + c) / dt**2
    vel = (c - a) / (2 * dt)
    om = conformal_factor(geom, m)
    return geom.project(acc - geom.grad_norm2(vel) / om)


def geodesic_residual(geom, samples, dt: float) -> float:
    """Sup-norm of the geodesic equation residual (see :func:`geodesic_residual_field`)."""
    return float(np.max(np.abs(geodesic_residual_field(geom, samples, dt))))


def radial_abs_integral(volume: float, fn) -> float:
    """∫|u|ω₀ for an axisymmetric u given as a function of x = cos θ (adaptive 1-D oracle)."""
    R2 = volume / (4 * math.pi)
    val, _ = integrate.quad(lambda x: abs(fn(x)), -1.0, 1.0, limit=400, epsabs=1e-12, epsrel=1e-12)
    return 2 * math.pi * R2 * val


# ---------------------------------------------------------------------------
# ε-geodesics
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class EpsilonGeodesic:
    """Solved axisymmetric ε-geodesic on the time grid ``t_k = k/(M−1)``."""

    epsilon: float
    times: np.ndarray = field(repr=False)
    profiles: np.ndarray = field(repr=False)  # (M, L+1) values at the Gauss colatitudes
    residual_sup: float
    iterations: int
    geom: SphereGeometry = field(repr=False)

    def kpot(self, k: int) -> np.ndarray:
        """Potential at time node ``k`` as a sphere grid field."""
        return np.repeat(self.profiles[k][:, None], self.geom.nlon, axis=1)

    @property
    def fields(self):
        return [self.kpot(k) for k in range(len(self.times))]


def _axisym_operators(geom: SphereGeometry):
    """Nodal m = 0 Laplacian and colatitude-derivative matrices on the Gauss nodes."""
    L = geom.L
    P, dP, _ = _legendre_table(geom.x, L, derivative=True)
    P0 = P[0]  # (L+1 degrees, L+1 nodes)
    analysis = P0 * (2 * math.pi * geom.gauss_weights)[None, :]
    l = np.arange(L + 1)
    lap = P0.T @ np.diag(l * (l + 1) / geom.radius**2) @ analysis
    grad = dP[0].T @ analysis / geom.radius
    return lap, grad


def _profile(geom, u):
    u = geom.check_field(u)
    if np.max(np.ptp(u, axis=1)) > 1e-9 * (1 + np.max(np.abs(u))):
        raise ValueError("epsilon-geodesic endpoints must be axisymmetric")
    return u.mean(axis=1)


def solve_epsilon_geodesic(geom, kpot0, kpot1, epsilon: float, M: int = 33,
                           tol: float = 1e-9, maxiter: int = 100) -> EpsilonGeodesic:
    """Solve ``φ″Ω − |∇₀φ′|² = ε`` with ``Ω = 1 − Δ₀φ`` and fixed endpoints.

    Time derivatives are second-order finite differences on ``M`` uniform
    nodes; space is the m = 0 Legendre collocation on the sphere's Gauss
    nodes. Newton iterations use the exact sparse Jacobian. Fine time grids
    are started from the interpolated solution on a grid with about half as
    many nodes, which keeps the iteration inside its basin.

    Raises
    ------
    RuntimeError
        When Newton fails within ``maxiter`` iterations (retry with ε-continuation).
    """
    _require_sphere(geom)
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    if M < 3:
        raise ValueError("need at least three time nodes")
    a, b = _profile(geom, kpot0), _profile(geom, kpot1)
    conformal_factor(geom, kpot0)
    conformal_factor(geom, kpot1)
    lap, grad = _axisym_operators(geom)
    n = geom.L + 1
    h = 1.0 / (M - 1)
    t = np.linspace(0.0, 1.0, M)
    g_diff = grad @ (b - a)
    om_min = min(np.min(1 - lap @ a), np.min(1 - lap @ b))
    C = (epsilon + np.max(g_diff**2)) / max(om_min, 1e-3)
    phi = (1 - t)[:, None] * a + t[:, None] * b - 0.5 * C * (t * (1 - t))[:, None]
    if M > 9:
        coarse = solve_epsilon_geodesic(geom, kpot0, kpot1, epsilon, (M + 1) // 2 + 1, tol, maxiter)
        spline = CubicSpline(coarse.times, coarse.profiles, axis=0)
        phi = spline(t)
        phi[0], phi[-1] = a, b

    def residual(phi):
        d2 = (phi[2:] - 2 * phi[1:-1] + phi[:-2]) / h**2
        d1 = (phi[2:] - phi[:-2]) / (2 * h)
        om = 1 - phi[1:-1] @ lap.T
        gd = d1 @ grad.T
        return d2 * om - gd**2 - epsilon, d1, d2, om, gd

    it = 0
    for it in range(1, maxiter + 1):
        R, d1, d2, om, gd = residual(phi)
        res = float(np.max(np.abs(R)))
        if res <= tol:
            it -= 1
            break
        K = M - 2
        blocks = [[None] * K for _ in range(K)]
        for k in range(K):
            blocks[k][k] = sp.csr_matrix(-2 * np.diag(om[k]) / h**2 - d2[k][:, None] * lap)
            off = gd[k][:, None] * grad / h
            if k > 0:
                blocks[k][k - 1] = sp.csr_matrix(np.diag(om[k]) / h**2 + off)
            if k < K - 1:
                blocks[k][k + 1] = sp.csr_matrix(np.diag(om[k]) / h**2 - off)
        J = sp.bmat(blocks, format="csc")
        step = spsolve(J, -R.ravel()).reshape(K, n)
        lam = 1.0
        while lam > 1e-6:
            trial = phi.copy()
            trial[1:-1] += lam * step
            if np.min(1 - trial[1:-1] @ lap.T) > 0:
                Rt = residual(trial)[0]
                if np.max(np.abs(Rt)) < (1 - 1e-4 * lam) * res or lam < 1e-3:
                    break
            lam *= 0.5
        phi = trial
    else:
        R = residual(phi)[0]
        raise RuntimeError(
            f"epsilon-geodesic Newton failed after {maxiter} iterations "
            f"(residual {np.max(np.abs(R)):.3e}); try continuation from a larger epsilon"
        )
    R, _, _, om, _ = residual(phi)
    normalized = float(np.max(np.abs(R / om)))
    return EpsilonGeodesic(epsilon, t, phi, max(float(np.max(np.abs(R))), normalized), it, geom)


def m_alpha_along(geom, higgs, alpha, tau, path_fields):
    """M_α at the vortex solution for each potential of a path; returns an array."""
    out = []
    init = None
    for kp in path_fields:
        sol = solve_vortex(VortexProblem(geom, higgs, tau, kp), init=init)
        init = sol.f
        out.append(m_alpha_reduced(geom, higgs, alpha, tau, kp, solution=sol))
    return np.array(out)


# ---------------------------------------------------------------------------
# path length and ray profiles
# ---------------------------------------------------------------------------


def d1_path_length(geom, path_fields, times, velocities=None, omegas=None) -> float:
    """∫dt ∫|φ̇_t|ω_{φ_t} along a sampled path (an upper bound for d₁ of the endpoints).

    ``φ̇`` is taken from second-order finite differences unless given; the
    spatial integral resolves the sign changes of ``φ̇`` (see
    ``integrate_abs``); the time integral is the trapezoid rule.
    """
    times = np.asarray(times, dtype=float)
    fields = [geom.check_field(u) for u in path_fields]
    if len(fields) < 2:
        return 0.0
    if velocities is None:
        velocities = np.gradient(np.array(fields), times, axis=0, edge_order=2)
    vals = []
    for k, u in enumerate(fields):
        om = omegas[k] if omegas is not None else conformal_factor(geom, u)
        v = velocities[k]
        if np.max(np.abs(v)) == 0:
            vals.append(0.0)
        else:
            vals.append(geom.integrate_abs(v, om))
    return float(integrate.trapezoid(vals, times))


@dataclass(frozen=True)
class RayProfile:
    """K_α and K_α′ sampled along a 1-PS ray."""

    t: np.ndarray
    k_alpha: np.ndarray
    k_alpha_prime: np.ndarray

    def rows(self):
        return list(zip(self.t.tolist(), self.k_alpha.tolist(), self.k_alpha_prime.tolist()))

    def to_csv(self) -> str:
        lines = ["t,k_alpha,k_alpha_prime"]
        lines += [f"{a:.17g},{b:.17g},{c:.17g}" for a, b, c in self.rows()]
        return "\n".join(lines) + "\n"


def _ray_derivative(geom, higgs_t, alpha, tau, phidot0, init=None):
    sol = solve_vortex(VortexProblem(geom, higgs_t, tau), init=init)
    rho = sol.density
    F = hermitian_curvature(geom, higgs_t, sol.f)
    c = 2 * math.pi * (2 - 2 * alpha * tau * higgs_t.degree) / geom.volume
    dens = geom.mean_curvature + alpha * geom.laplacian(rho) - 2 * alpha * tau * F - c
    return -geom.integrate(phidot0 * dens), sol


def ray_k_alpha_profile(geom, higgs: HiggsData, alpha: float, tau: float, ray: OnePSRay, times) -> RayProfile:
    """K_α along the ray, computed in the frame where ω₀ is fixed and the divisor flows.

    ``K_α′(t) = −∫φ̇₀(Ric ω₀ − 2αi∂∂̄|φ(t)|²_{ĥ_t} − 2ατiF_{ĥ_t} − cω₀)`` with the
    vortex ``ĥ_t`` of the pulled-back divisor; ``K_α(t)`` integrates it from
    the value at ``t = 0`` by the trapezoid rule.
    """
    _require_sphere(geom)
    times = np.asarray(times, dtype=float)
    phidot0 = ray.velocity(geom, 0.0)
    kp = []
    init = None
    for t in times:
        try:
            ht = pullback_higgs(higgs, float(t))
            val, sol = _ray_derivative(geom, ht, alpha, tau, phidot0, init)
        except Exception as exc:
            raise RuntimeError(f"ray profile failed at t = {t}: {exc}") from exc
        init = sol.f
        kp.append(val)
    kp = np.array(kp)
    k0 = k_alpha_reduced(geom, pullback_higgs(higgs, float(times[0])), alpha, tau, geom.constant(0.0)).k_alpha
    kvals = k0 + integrate.cumulative_trapezoid(kp, times, initial=0.0)
    return RayProfile(times, kvals, kp)


def ray_slope_limit(profile: RayProfile, at=(4.0, 5.0, 6.0)) -> float:
    """Slope at infinity by Aitken Δ² extrapolation of K_α′ sampled at three times.

    Falls back to the last sample when the second difference is negligible
    (the sequence has already converged).
    """
    idx = [int(np.argmin(np.abs(profile.t - a))) for a in at]
    s0, s1, s2 = (float(profile.k_alpha_prime[i]) for i in idx)
    den = s2 - 2 * s1 + s0
    scale = max(abs(s0), abs(s1), abs(s2), 1e-300)
    if abs(den) <= 1e-12 * scale:
        return s2
    lim = s2 - (s2 - s1) ** 2 / den
    # Aitken is only meaningful for a geometric tail; keep it within the sampled trend
    if (s2 - s1) * (s1 - s0) <= 0:
        return s2
    return lim
