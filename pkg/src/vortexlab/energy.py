"""
Energy functionals on pairs (f, φ): K-energy, the coupling functional M_α,
the reduced α-K-energy, the Aubin–Mabuchi functional and its companions.

All integrals are densities against ω₀ evaluated with the geometry's single
quadrature. With ``Ω = 1 − Δ₀φ``, ``F̂ = 2πN/V + Δ₀f`` (density of iF_h) and
``ρ = ρ₀e^{2f}`` (= |φ|²_h) the pair functional is

    K(φ)    = ½∫Ω log Ω − ⟨S⟩·D(φ,φ)
    M_α(f,φ) = 2α[(4πN/V)∫f + 2D(f,f)] + α∫(ρΩ − ρ₀) − 2ατ∫fΩ − (c − ⟨S⟩)D(φ,φ)

where ``D(a,b) = ∫i∂a∧∂̄b``. The final term ``∫φ(−Ric ω₀ + 2ατiF_{h₀} + cω₀)``
has identically vanishing density on a constant-curvature background and is
reported separately as ``linear_term``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .higgs import HiggsData
from .surface import BackgroundGeometry, conformal_curvature, conformal_factor
from .vortex import VortexProblem, VortexSolution, hermitian_curvature, solve_vortex

__all__ = [
    "EnergyBreakdown",
    "SecondVariation",
    "constant_c",
    "k_energy",
    "entropy",
    "m_alpha_pair",
    "m_alpha_terms",
    "m_alpha_reduced",
    "k_alpha_pair",
    "k_alpha_reduced",
    "pair_gradient",
    "sigma_alpha_density",
    "second_variation_terms",
    "am_functional",
    "i_functional",
    "j_xi",
    "j_xi_derivative",
    "format_report",
]


def constant_c(genus: int, alpha: float, tau: float, N: int, V: float) -> float:
    """c = 2π(χ − 2ατN)/V."""
    if not V > 0:
        raise ValueError("volume must be positive")
    return 2 * math.pi * ((2 - 2 * genus) - 2 * alpha * tau * N) / V


def _c(geom, higgs, alpha, tau):
    return constant_c(geom.genus, alpha, tau, higgs.degree, geom.volume)


def k_energy(geom: BackgroundGeometry, kpot) -> float:
    """K(φ) = ½∫log(ω_φ/ω₀)ω_φ + (⟨S⟩/2)∫φ(ω_φ − ω₀)."""
    om = conformal_factor(geom, kpot)
    return 0.5 * geom.integrate(om * np.log(om)) - geom.mean_curvature * geom.dirichlet(kpot, kpot)


def entropy(geom: BackgroundGeometry, kpot) -> float:
    """(1/V)∫log(ω_φ/ω₀)ω_φ."""
    om = conformal_factor(geom, kpot)
    return geom.integrate(om * np.log(om)) / geom.volume


def m_alpha_terms(geom: BackgroundGeometry, higgs: HiggsData, alpha: float, tau: float, f, kpot) -> dict:
    """The individual terms of M_α(f, φ), keyed by their role."""
    om = conformal_factor(geom, kpot)
    N, V = higgs.degree, geom.volume
    rho0 = higgs.density
    c = _c(geom, higgs, alpha, tau)
    S = geom.mean_curvature
    lin_density = -S + 2 * alpha * tau * higgs.curvature_density + c
    return {
        "curvature_term": 2 * alpha * (4 * math.pi * N / V * geom.integrate(f) + 2 * geom.dirichlet(f, f)),
        "higgs_term": alpha * geom.integrate(rho0 * (np.exp(2 * f) * om - 1.0)),
        "tau_term": -2 * alpha * tau * geom.integrate(f * om),
        "dirichlet_term": -(c - S) * geom.dirichlet(kpot, kpot),
        "linear_term": lin_density * geom.integrate(kpot),
    }


def m_alpha_pair(geom: BackgroundGeometry, higgs: HiggsData, alpha: float, tau: float, f, kpot) -> float:
    """M_α(f, φ) with the reference metric h₀ and background ω₀ fixed."""
    return float(sum(m_alpha_terms(geom, higgs, alpha, tau, f, kpot).values()))


def k_alpha_pair(geom, higgs, alpha, tau, f, kpot) -> float:
    """K̃_α(f, φ) = K(φ) + M_α(f, φ)."""
    return k_energy(geom, kpot) + m_alpha_pair(geom, higgs, alpha, tau, f, kpot)


def _solve(geom, higgs, tau, kpot, solution=None, init=None) -> VortexSolution:
    if solution is not None:
        return solution
    return solve_vortex(VortexProblem(geom, higgs, tau, kpot), init=init)


def m_alpha_reduced(geom, higgs, alpha, tau, kpot, solution: VortexSolution | None = None, init=None) -> float:
    """M_α(ψ) at the vortex solution f_ψ, in the form that only needs f_ψ ∈ W^{1,2}.

    ``2α∫(f·2iF_{h₀} + 2i∂f∧∂̄f) − 2ατ∫(fω₀ − 2i∂f∧∂̄ψ) − (c−⟨S⟩)∫i∂ψ∧∂̄ψ
    + ατ(V − 4πN/τ) − α∫|φ|²_{h₀}ω₀ + ∫ψ(−Ric ω₀ + 2ατiF_{h₀} + cω₀)``.
    """
    f = _solve(geom, higgs, tau, kpot, solution, init).f
    N, V = higgs.degree, geom.volume
    c = _c(geom, higgs, alpha, tau)
    S = geom.mean_curvature
    lin_density = -S + 2 * alpha * tau * higgs.curvature_density + c
    return (
        2 * alpha * (2 * higgs.curvature_density * geom.integrate(f) + 2 * geom.dirichlet(f, f))
        - 2 * alpha * tau * (geom.integrate(f) - 2 * geom.dirichlet(f, kpot))
        - (c - S) * geom.dirichlet(kpot, kpot)
        + alpha * (tau * V - 4 * math.pi * N)
        - alpha * geom.integrate(higgs.density)
        + lin_density * geom.integrate(kpot)
    )


@dataclass(frozen=True)
class EnergyBreakdown:
    """Values of the functionals at one Kähler potential, with their provenance."""

    k_energy: float
    m_alpha: float
    k_alpha: float
    entropy: float
    am: float
    constants: dict
    terms: dict = field(default_factory=dict)
    f: np.ndarray = field(default=None, repr=False)

    def report(self) -> dict:
        return {
            "k_energy": self.k_energy,
            "m_alpha": self.m_alpha,
            "k_alpha": self.k_alpha,
            "am": self.am,
            "c": self.constants["c"],
            "mean_s": self.constants["mean_s"],
        }


def k_alpha_reduced(geom, higgs, alpha, tau, kpot, solution: VortexSolution | None = None, init=None) -> EnergyBreakdown:
    """Reduced α-K-energy K_α(ψ) = K(ψ) + M_α(ψ) with f = f_ψ the vortex solution."""
    sol = _solve(geom, higgs, tau, kpot, solution, init)
    k = k_energy(geom, kpot)
    terms = m_alpha_terms(geom, higgs, alpha, tau, sol.f, kpot)
    m = float(sum(terms.values()))
    constants = {
        "alpha": alpha, "tau": tau, "V": geom.volume, "N": higgs.degree,
        "c": _c(geom, higgs, alpha, tau), "mean_s": geom.mean_curvature,
    }
    return EnergyBreakdown(
        k_energy=k, m_alpha=m, k_alpha=k + m, entropy=entropy(geom, kpot),
        am=am_functional(geom, kpot), constants=constants, terms=terms, f=sol.f,
    )


def pair_gradient(geom, higgs, alpha, tau, f, kpot):
    """Densities (g_f, g_φ) with dK̃_α = ∫(ḟ g_f + φ̇ g_φ)ω₀ for independent f and φ."""
    om = conformal_factor(geom, kpot)
    F = hermitian_curvature(geom, higgs, f)
    rho = higgs.density * np.exp(2 * f)
    c = _c(geom, higgs, alpha, tau)
    gf = 4 * alpha * geom.project(F + 0.5 * (rho - tau) * om)
    scal = geom.mean_curvature + 0.5 * geom.laplacian(np.log(om))  # = S_ω Ω
    gphi = geom.project(-scal - alpha * geom.laplacian(rho) + 2 * alpha * tau * F + c * om)
    return gf, gphi


def sigma_alpha_density(geom, higgs, alpha, tau, kpot, solution: VortexSolution | None = None, init=None) -> np.ndarray:
    """Density of the reduced 1-form σ_α against ω₀.

    ``σ_α(φ̇) = −∫φ̇(ω_φ(S_φ + αΔ_φ|φ|²_h) − 2ατiF_h − cω_φ)``, so the density is
    ``−(S₀ + ½Δ₀log Ω) − αΔ₀ρ + 2ατF̂ + cΩ``. It is the gradient of K_α.
    """
    sol = _solve(geom, higgs, tau, kpot, solution, init)
    return pair_gradient(geom, higgs, alpha, tau, sol.f, kpot)[1]


@dataclass(frozen=True)
class SecondVariation:
    """The five terms of the second derivative of K̃_α along a curve (f_t, φ_t)."""

    connection_norm: float
    higgs_norm: float
    kahler_norm: float
    wp1_term: float
    wp2_term: float

    @property
    def total(self) -> float:
        return self.connection_norm + self.higgs_norm + self.kahler_norm + self.wp1_term + self.wp2_term

    def as_dict(self) -> dict:
        return {
            "connection_norm": self.connection_norm, "higgs_norm": self.higgs_norm,
            "kahler_norm": self.kahler_norm, "wp1_term": self.wp1_term,
            "wp2_term": self.wp2_term, "total": self.total,
        }


def second_variation_terms(geom, higgs, alpha, tau, jet) -> SecondVariation:
    """Second derivative of K̃_α along a curve with jet ``(f, φ, f′, φ′, f″, φ″)``.

    The Hamiltonian field of φ′ for ω_φ has ``Jη = ∇_ωφ′ = ∇₀φ′/Ω``, so with
    ``P = ∇₀φ′`` the five terms read

    * ``4α∫|∇f′ + (F̂/Ω)P|²`` (curvature of h along η),
    * ``4α∫(|P|²Q/(4Ω) − f′P·∇ρ + f′²ρΩ)`` with ``Q = |∇ρ|²/ρ = 2ρF̂ − Δ₀ρ``,
    * ``½∫(Δ₀φ′)²/Ω − ∫S_ω|P|²`` (= 2‖∂̄∇^{1,0}φ′‖²),
    * ``4α∫(f″ − 2P·∇f′/Ω − F̂|P|²/Ω²)℘₁ω_φ`` with ``℘₁ω_φ`` the vortex residual,
    * ``∫(φ″ − |P|²/Ω)℘₂ω_φ`` with ``℘₂ω_φ`` the σ_α density.
    """
    f, kpot, f1, p1, f2, p2 = (geom.check_field(a) for a in jet)
    om = conformal_factor(geom, kpot)
    F = hermitian_curvature(geom, higgs, f)
    rho = higgs.density * np.exp(2 * f)
    gx, gy = geom.gradient(p1)
    fx, fy = geom.gradient(f1)
    rx, ry = geom.gradient(rho)
    P2 = gx * gx + gy * gy
    Q = 2 * rho * F - geom.laplacian(rho)
    S = conformal_curvature(geom, kpot)
    ax, ay = fx + F / om * gx, fy + F / om * gy
    conn = 4 * alpha * geom.integrate(ax * ax + ay * ay)
    hig = 4 * alpha * geom.integrate(P2 * Q / (4 * om) - f1 * (gx * rx + gy * ry) + f1 * f1 * rho * om)
    kah = 0.5 * geom.integrate(geom.laplacian(p1) ** 2 / om) - geom.integrate(S * P2)
    wp1 = F + 0.5 * (rho - tau) * om
    t4 = 4 * alpha * geom.integrate((f2 - 2 * (gx * fx + gy * fy) / om - F * P2 / om**2) * wp1)
    g = pair_gradient(geom, higgs, alpha, tau, f, kpot)[1]
    t5 = geom.integrate((p2 - P2 / om) * g)
    return SecondVariation(conn, hig, kah, t4, t5)


def am_functional(geom: BackgroundGeometry, kpot) -> float:
    """AM(φ) = (1/2V)∫φ(ω₀ + ω_φ)."""
    return (geom.integrate(kpot) - geom.dirichlet(kpot, kpot)) / geom.volume


def i_functional(geom: BackgroundGeometry, u0, u1) -> float:
    """I(u₀, u₁) = V⁻¹∫(u₀ − u₁)(ω_{u₁} − ω_{u₀})."""
    d = np.asarray(u0) - np.asarray(u1)
    return 2.0 * geom.dirichlet(d, d) / geom.volume


def j_xi(geom: BackgroundGeometry, xi, kpot) -> float:
    """J_ξ(φ) = ∫φξ − ½∫φ(ω₀ + ω_φ); ``xi`` is the density of ξ against ω₀."""
    xi = np.asarray(xi, dtype=float) * np.ones(geom.shape)
    if abs(geom.integrate(xi) - geom.volume) > 1e-8 * geom.volume:
        raise ValueError("xi must have total mass V")
    return geom.integrate(kpot * xi) - geom.volume * am_functional(geom, kpot)


def j_xi_derivative(geom: BackgroundGeometry, xi, kpot_dot, omega) -> float:
    """d/dt J_ξ(φ_t) = ∫φ̇ξ − ∫φ̇ω_φ, given φ̇ and the conformal factor of ω_φ."""
    xi = np.asarray(xi, dtype=float) * np.ones(geom.shape)
    return geom.integrate(kpot_dot * xi) - geom.integrate(kpot_dot * omega)


def format_report(values: dict) -> str:
    """``key = value`` lines with 17 significant digits."""
    out = []
    for k, v in values.items():
        if isinstance(v, float):
            out.append(f"{k} = {v:.17g}")
        else:
            out.append(f"{k} = {v}")
    return "\n".join(out) + "\n"
