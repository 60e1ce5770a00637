"""
The abelian vortex equation at a fixed background Kähler potential.

For ``h = h₀e^{2f}`` and ``ω_φ = Ω ω₀`` with ``Ω = 1 − Δ₀φ`` the equation
``iF_h + ½(|φ|²_h − τ)ω_φ = 0`` reads, as a density against ω₀,

    R(f) = 2πN/V + Δ₀f + ½(ρ₀e^{2f} − τ)Ω = 0.

``R`` is the gradient of the strictly convex functional ``M̂`` below, and
the solver is Newton's method on ``R`` with an Armijo line search on ``M̂``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .higgs import HiggsData
from .surface import BackgroundGeometry, conformal_factor, weighted_cg

__all__ = [
    "BradlowViolated",
    "VortexProblem",
    "VortexSolution",
    "hermitian_curvature",
    "vortex_residual",
    "mhat_energy",
    "mhat_gradient",
    "solve_vortex",
    "vortex_stability_bound",
    "gradient_energy",
]


class BradlowViolated(RuntimeError):
    """No vortex exists: τV ≤ 4πN, or the iteration diverges to h → 0."""


@dataclass(frozen=True, eq=False)
class VortexProblem:
    """Vortex equation data: geometry, Higgs data, τ, and a background Kähler potential."""

    geom: BackgroundGeometry = field(repr=False)
    higgs: HiggsData = field(repr=False)
    tau: float
    kpot: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.kpot is None:
            object.__setattr__(self, "kpot", self.geom.constant(0.0))
        omega = conformal_factor(self.geom, self.kpot)
        object.__setattr__(self, "_omega", omega)

    @property
    def omega(self) -> np.ndarray:
        """Conformal factor Ω = ω_φ/ω₀."""
        return self._omega

    @property
    def degree(self) -> int:
        return self.higgs.degree

    @property
    def bradlow_gap(self) -> float:
        """τV − 4πN; positive exactly when a vortex exists."""
        return self.tau * self.geom.volume - 4 * math.pi * self.degree


@dataclass(frozen=True, eq=False)
class VortexSolution:
    """Converged vortex: ``h = h₀e^{2f}`` with diagnostics."""

    f: np.ndarray = field(repr=False)
    residual_sup: float
    degree_defect: float
    pointwise_max: float
    iterations: int
    residual_history: tuple = field(repr=False)
    problem: VortexProblem = field(repr=False)

    @property
    def density(self) -> np.ndarray:
        """|φ|²_h = ρ₀e^{2f}."""
        return self.problem.higgs.density * np.exp(2 * self.f)

    def degree_integral(self) -> float:
        """∫|φ|²_h ω_φ."""
        return self.problem.geom.integrate(self.density * self.problem.omega)


def hermitian_curvature(geom: BackgroundGeometry, higgs: HiggsData, f) -> np.ndarray:
    """Density of iF_{h₀e^{2f}} against ω₀: 2πN/V + Δ₀f."""
    return higgs.curvature_density + geom.laplacian(f)


def vortex_residual(problem: VortexProblem, f) -> np.ndarray:
    """R(f) as a density against ω₀ (band-limited on the sphere)."""
    geom = problem.geom
    rho = problem.higgs.density * np.exp(2 * f)
    return geom.project(hermitian_curvature(geom, problem.higgs, f) + 0.5 * (rho - problem.tau) * problem.omega)


def mhat_energy(problem: VortexProblem, f) -> float:
    """M̂(f) = ∫i∂f∧∂̄f + (2πN/V)∫f ω₀ + ¼∫ρ₀(e^{2f}−1)ω_φ − (τ/2)∫f ω_φ.

    With ``φ = 0`` this is ``∫i∂f∧∂̄f + ¼∫ρ₀e^{2f}ω₀ − (τ/2V)(V − 4πN/τ)∫fω₀ − ¼∫ρ₀ω₀``.
    The reference metric stays h₀ for every background, so the gradient is
    exactly the vortex residual for ω_φ.
    """
    geom = problem.geom
    f = geom.check_field(f)
    om = problem.omega
    rho0 = problem.higgs.density
    return (
        geom.dirichlet(f, f)
        + problem.higgs.curvature_density * geom.integrate(f)
        + 0.25 * geom.integrate(rho0 * np.expm1(2 * f) * om)
        - 0.5 * problem.tau * geom.integrate(f * om)
    )


def mhat_gradient(problem: VortexProblem, f) -> np.ndarray:
    """Density g with d/dt M̂(f + tḟ)|₀ = ∫ḟ g ω₀, i.e. the vortex residual."""
    return vortex_residual(problem, problem.geom.check_field(f))


def _residual_norm(problem, r) -> float:
    return max(float(np.max(np.abs(r))), float(np.max(np.abs(r / problem.omega))))


def _newton_step(problem, f, r):
    geom = problem.geom
    pot = problem.higgs.density * np.exp(2 * f) * problem.omega
    pbar = max(geom.mean(pot), 1e-300)
    return weighted_cg(geom, lambda x: geom.laplacian(x) + geom.project(pot * x), -r,
                       lambda y: geom.spectral_solve(y, pbar), rtol=1e-14, maxiter=500)


def solve_vortex(problem: VortexProblem, init=None, tol: float | None = None, maxiter: int = 60) -> VortexSolution:
    """Newton iteration with Armijo damping on M̂.

    Parameters
    ----------
    problem : VortexProblem
    init : ndarray, optional
        Starting Hermitian potential; defaults to ``½(log τ − log mean ρ₀)``.
    tol : float, optional
        Target for ``max(sup|R|, sup|R/Ω|)``; defaults to ``1e-11·τ``. The
        iteration also stops once the residual is below ``1e-8·τ`` and has
        stopped decreasing (round-off floor).

    Raises
    ------
    BradlowViolated
        When ``τV ≤ 4πN`` or when ``mean(f)`` drops below −50 without the
        residual decreasing.
    """
    geom = problem.geom
    tau = problem.tau
    if problem.bradlow_gap <= 0:
        raise BradlowViolated(
            f"BradlowViolated: tau*V - 4*pi*N = {problem.bradlow_gap:.6g} <= 0, no vortex solution exists"
        )
    tol = 1e-11 * tau if tol is None else tol
    accept = max(tol, 1e-8 * tau)
    if init is None:
        f = geom.constant(0.5 * (math.log(tau) - math.log(geom.mean(problem.higgs.density))))
    else:
        f = geom.project(geom.check_field(init).copy())
    r = vortex_residual(problem, f)
    energy = mhat_energy(problem, f)
    history = [_residual_norm(problem, r)]
    for it in range(1, maxiter + 1):
        if history[-1] <= tol:
            break
        step = _newton_step(problem, f, r)
        slope = geom.inner(step, r)
        lam = 1.0
        while True:
            trial = f + lam * step
            e_trial = mhat_energy(problem, trial)
            if e_trial <= energy + 1e-4 * lam * slope or lam < 1e-10:
                break
            if history[-1] < 1e-6 * tau and lam == 1.0:
                # near the solution M̂ differences drown in round-off; trust Newton
                break
            lam *= 0.5
        f, energy = trial, e_trial
        r = vortex_residual(problem, f)
        history.append(_residual_norm(problem, r))
        if geom.mean(f) < -50 and history[-1] >= history[-2]:
            raise BradlowViolated("BradlowViolated: mean(f) < -50 with non-decreasing residual")
        if history[-1] <= accept and len(history) >= 3 and history[-1] > 0.5 * history[-2]:
            break
    res = history[-1]
    if not res <= accept:
        if geom.mean(f) < -50:
            raise BradlowViolated("BradlowViolated: Hermitian potential diverges to -infinity")
        raise RuntimeError(f"vortex Newton did not converge: residual {res:.3e} after {len(history) - 1} steps")
    rho = problem.higgs.density * np.exp(2 * f)
    degree_defect = abs(geom.integrate(rho * problem.omega) - problem.bradlow_gap)
    return VortexSolution(
        f=f, residual_sup=res, degree_defect=degree_defect, pointwise_max=float(np.max(rho)),
        iterations=len(history) - 1, residual_history=tuple(history), problem=problem,
    )


def gradient_energy(geom: BackgroundGeometry, u) -> float:
    """∫|∇u|²₀ ω₀ (twice the Dirichlet pairing)."""
    return 2.0 * geom.dirichlet(u, u)


def vortex_stability_bound(problem: VortexProblem, kpot_a, kpot_b, sol_a=None, sol_b=None):
    """Left and right sides of the gradient estimate relating two backgrounds.

    Returns ``(lhs, rhs)`` with ``lhs = ∫|∇(f_a − f_b)|²`` and
    ``rhs = (τ²/4)E + τ√(2πN)·√E`` where ``E = ∫|∇(ψ_a − ψ_b)|²``.
    """
    geom = problem.geom
    pa = VortexProblem(geom, problem.higgs, problem.tau, kpot_a)
    pb = VortexProblem(geom, problem.higgs, problem.tau, kpot_b)
    sa = sol_a or solve_vortex(pa)
    sb = sol_b or solve_vortex(pb, init=sa.f)
    lhs = gradient_energy(geom, sa.f - sb.f)
    e = gradient_energy(geom, np.asarray(kpot_a) - np.asarray(kpot_b))
    tau = problem.tau
    rhs = 0.25 * tau**2 * e + tau * math.sqrt(2 * math.pi * problem.degree) * math.sqrt(max(e, 0.0))
    return lhs, rhs
