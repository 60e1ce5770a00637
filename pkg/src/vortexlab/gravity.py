"""
Gravitating vortices by continuation in the coupling constant α.

On a constant-curvature background the gravitating vortex equations become
a system for the Hermitian potential f and the Kähler potential φ:

    Δ₀f + ½(|φ|²_h − τ)E = −2πN/V,     Δ₀φ + E = 1,
    E = exp(4ατf − 2α|φ|²_h − 2cφ),

so that ``ω_φ = Eω₀``. The solver adds a scalar ``κ`` inside the exponential
together with the normalization ``AM(φ) = 0``; whenever ``c ≠ 0`` the
multiplier is absorbed into a constant shift of φ after convergence, so the
returned pair solves the displayed system literally. For ``c = 0`` the
constant mode of φ is undetermined and the AM-normalized representative
(with its multiplier) is returned.

The twisted system replaces ``c`` by ``c − λ`` and adds ``2λχ_ξ`` to the
exponent, where ``Δ₀χ_ξ = ξ/ω₀ − 1``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import LinearOperator, gmres

from .energy import am_functional, constant_c, k_alpha_pair
from .higgs import Divisor, HiggsData
from .surface import BackgroundGeometry, conformal_curvature, conformal_factor
from .vortex import BradlowViolated, VortexProblem, hermitian_curvature, solve_vortex

__all__ = [
    "GravConfig",
    "GravSolution",
    "ContinuityStalled",
    "ContinuityTrace",
    "VerifyReport",
    "constant_c",
    "existence_conditions",
    "coupled_residual",
    "solve_gravitating",
    "verify_solution",
    "solve_twisted",
    "futaki_closed_form",
    "check_polystability",
]


def existence_conditions(genus: int, alpha: float, tau: float, N: int, V: float, m: int) -> dict:
    """The three numerical conditions for existence in genus ≥ 1.

    (1) V − 4πN/τ > 0; (2) ατ(8πN/τ − V) < ((2g−2)/N)(V − 4πN/τ); (3) 2ατm < 1.
    """
    gap = V - 4 * math.pi * N / tau
    return {
        "volume": gap > 0,
        "coupling": alpha * tau * (8 * math.pi * N / tau - V) < (2 * genus - 2) / N * gap,
        "multiplicity": 2 * alpha * tau * m < 1,
    }


@dataclass(frozen=True, eq=False)
class GravConfig:
    """Problem data for the gravitating vortex equations and its continuity schedule.

    ``alpha_steps`` is either the initial step Δα (a float) or an explicit
    increasing sequence of intermediate α values; in both cases a failed
    step is halved down to ``min_step``.
    """

    geom: BackgroundGeometry = field(repr=False)
    higgs: HiggsData = field(repr=False)
    tau: float
    alpha: float
    alpha_steps: object = 0.05
    min_step: float = 1e-4

    def __post_init__(self):
        if not self.alpha >= 0:
            raise ValueError("alpha must be nonnegative")
        if self.tau * self.geom.volume <= 4 * math.pi * self.higgs.degree:
            raise BradlowViolated(
                f"BradlowViolated: V - 4*pi*N/tau = {self.geom.volume - 4 * math.pi * self.higgs.degree / self.tau:.6g} <= 0"
            )

    @property
    def c(self) -> float:
        return constant_c(self.geom.genus, self.alpha, self.tau, self.higgs.degree, self.geom.volume)


@dataclass(frozen=True, eq=False)
class GravSolution:
    """Converged solution of the coupled system."""

    f: np.ndarray = field(repr=False)
    kpot: np.ndarray = field(repr=False)
    c: float
    alpha: float
    residual_sup: tuple
    k_alpha_value: float
    multiplier: float = 0.0
    lam: float = 0.0
    newton_iters: int = 0


@dataclass
class ContinuityTrace:
    """Append-only record of accepted continuation steps."""

    rows: list = field(default_factory=list)

    def append(self, alpha, iters, res_f, res_kpot, k_alpha):
        self.rows.append((float(alpha), int(iters), float(res_f), float(res_kpot), float(k_alpha)))

    @property
    def alphas(self):
        return [r[0] for r in self.rows]

    def to_csv(self) -> str:
        lines = ["alpha,newton_iters,res_f,res_kpot,k_alpha"]
        lines += [f"{a:.17g},{i},{rf:.17g},{rk:.17g},{k:.17g}" for a, i, rf, rk, k in self.rows]
        return "\n".join(lines) + "\n"


class ContinuityStalled(RuntimeError):
    """Newton failed below the target α even after step halving to the floor."""

    def __init__(self, alpha, trace, solution=None, message="", diagnostics=None):
        self.alpha = alpha
        self.trace = trace
        self.solution = solution
        self.diagnostics = diagnostics or {}
        super().__init__(message or f"ContinuityStalled: continuation stalled at alpha = {alpha:.6g}")


# ---------------------------------------------------------------------------
# nonlinear system
# ---------------------------------------------------------------------------


class _System:
    """Residual and Jacobian of the (f, φ, κ) system at fixed α and λ."""

    def __init__(self, geom, higgs, tau, alpha, lam=0.0, xi=None):
        self.geom, self.higgs, self.tau, self.alpha, self.lam = geom, higgs, tau, alpha, lam
        self.c = constant_c(geom.genus, alpha, tau, higgs.degree, geom.volume)
        self.cp = self.c - lam
        if lam != 0.0:
            xi = np.ones(geom.shape) if xi is None else np.asarray(xi, dtype=float)
            self.chi = geom.spectral_solve(xi - 1.0, 0.0)
        else:
            self.chi = np.zeros(geom.shape)
        self.n = int(np.prod(geom.shape))

    def exponent(self, f, phi, kappa):
        rho = self.higgs.density * np.exp(2 * f)
        return rho, 4 * self.alpha * self.tau * f - 2 * self.alpha * rho - 2 * self.cp * phi + 2 * self.lam * self.chi + kappa

    def residual(self, f, phi, kappa):
        g = self.geom
        rho, ex = self.exponent(f, phi, kappa)
        E = np.exp(ex)
        r1 = g.project(g.laplacian(f) + self.higgs.curvature_density + 0.5 * (rho - self.tau) * E)
        r2 = g.project(g.laplacian(phi) + E - 1.0)
        r3 = am_functional(g, phi)
        return r1, r2, r3, rho, E

    def pack(self, a, b, k):
        return np.concatenate([a.ravel(), b.ravel(), [k]])

    def unpack(self, x):
        s = self.geom.shape
        return x[: self.n].reshape(s), x[self.n: 2 * self.n].reshape(s), float(x[-1])

    def newton_direction(self, f, phi, kappa, r1, r2, r3, rho, E, rtol=1e-6):
        g = self.geom
        a, tau, cp = self.alpha, self.tau, self.cp
        om = 1.0 - g.laplacian(phi)
        V = g.volume

        def matvec(x):
            df, dp, dk = self.unpack(x)
            dE = E * (4 * a * (tau - rho) * df - 2 * cp * dp + dk)
            o1 = g.project(g.laplacian(df) + rho * E * df + 0.5 * (rho - tau) * dE)
            o2 = g.project(g.laplacian(dp) + dE)
            o3 = g.integrate(om * dp) / V
            return self.pack(o1, o2, o3)

        # constant-coefficient model of the Jacobian, inverted mode by mode
        a11 = g.mean(rho * E - 2 * a * (rho - tau) ** 2 * E)
        a12 = g.mean(-cp * (rho - tau) * E)
        a21 = g.mean(4 * a * (tau - rho) * E)
        a22 = g.mean(-2 * cp * E)
        b1 = g.mean(0.5 * (rho - tau) * E)
        ebar = g.mean(E)
        k = g.eigenvalues
        d11, d22 = k + a11, k + a22
        det = d11 * d22 - a12 * a21
        det = np.where(np.abs(det) > 1e-8 * (1 + k * k), det, 1.0)
        const = np.linalg.inv(np.array([[a11, a12, b1], [a21, a22, ebar], [0.0, g.mean(om), 0.0]]))
        live = k > 0

        def precond(x):
            r1_, r2_, r3_ = self.unpack(x)
            m1, m2 = g.mean(r1_), g.mean(r2_)
            c1, c2 = g.to_spectral(r1_ - m1), g.to_spectral(r2_ - m2)
            z1 = np.where(live, (d22 * c1 - a12 * c2) / det, 0.0)
            z2 = np.where(live, (d11 * c2 - a21 * c1) / det, 0.0)
            zf, zp = g.from_spectral(z1), g.from_spectral(z2)
            zf -= g.mean(zf)
            zp -= g.mean(zp)
            mf, mp, dk = const @ np.array([m1, m2, r3_])
            return self.pack(zf + mf, zp + mp, dk)

        size = 2 * self.n + 1
        A = LinearOperator((size, size), matvec=matvec)
        M = LinearOperator((size, size), matvec=precond)
        b = -self.pack(r1, r2, r3)
        x, _ = gmres(A, b, rtol=rtol, atol=1e-14, restart=60, maxiter=30, M=M)
        return self.unpack(x)


def _norms(r1, r2):
    return float(np.max(np.abs(r1))), float(np.max(np.abs(r2)))


def _newton(system: _System, f, phi, kappa, tol=1e-11, accept=1e-8, maxiter=40):
    """Damped Newton on the coupled system; returns (f, φ, κ, iters, (res_f, res_φ), ok)."""
    g = system.geom
    r1, r2, r3, rho, E = system.residual(f, phi, kappa)

    def merit(a, b, c3):
        return max(_norms(a, b) + (abs(c3),))

    cur = merit(r1, r2, r3)
    hist = [cur]
    it = 0
    for it in range(1, maxiter + 1):
        if cur <= tol:
            it -= 1
            break
        df, dp, dk = system.newton_direction(f, phi, kappa, r1, r2, r3, rho, E)
        lam = 1.0
        while True:
            tf, tp, tk = f + lam * df, phi + lam * dp, kappa + lam * dk
            om = 1.0 - g.laplacian(tp)
            if np.min(om) > 1e-8:
                with np.errstate(over="ignore"):
                    out = system.residual(tf, tp, tk)
                m = merit(*out[:3])
                if np.isfinite(m) and (m < (1 - 1e-4 * lam) * cur or (cur < 1e-7 and m < 2 * cur)):
                    break
            lam *= 0.5
            if lam < 1e-6:
                return f, phi, kappa, it, _norms(r1, r2), False
        f, phi, kappa = tf, tp, tk
        r1, r2, r3, rho, E = out
        prev, cur = cur, m
        hist.append(cur)
        if cur <= accept and len(hist) >= 3 and cur > 0.5 * prev:
            break  # round-off floor
    ok = cur <= accept
    return f, phi, kappa, it, _norms(r1, r2), ok


def coupled_residual(config: GravConfig, f, kpot, multiplier: float = 0.0):
    """Left-minus-right residual densities of the two equations of the reduced system."""
    sysm = _System(config.geom, config.higgs, config.tau, config.alpha)
    r1, r2, _, _, _ = sysm.residual(config.geom.check_field(f), config.geom.check_field(kpot), multiplier)
    return r1, r2


def _finalize(system, f, phi, kappa, iters, res):
    geom = system.geom
    if abs(system.cp) > 1e-12:
        phi = phi - kappa / (2 * system.cp)
        kappa = 0.0
        r1, r2, _, _, _ = system.residual(f, phi, kappa)
        res = _norms(r1, r2)
    kval = k_alpha_pair(geom, system.higgs, system.alpha, system.tau, f, phi)
    return GravSolution(f=f, kpot=phi, c=system.c, alpha=system.alpha, residual_sup=res,
                        k_alpha_value=kval, multiplier=kappa, lam=system.lam, newton_iters=iters)


def _start(geom, higgs, tau, kpot=None):
    sol = solve_vortex(VortexProblem(geom, higgs, tau, kpot))
    return sol.f


def _record(diag, geom, sol):
    """Stall diagnostics: mean of f and a d₁-distance proxy ``V⁻¹∫|φ|½(ω₀ + ω_φ)`` from φ = 0."""
    om = 1.0 - geom.laplacian(sol.kpot)
    diag["mean_f"].append(geom.mean(sol.f))
    diag["d1_proxy"].append(geom.integrate(np.abs(sol.kpot) * 0.5 * (1.0 + om)) / geom.volume)


def solve_gravitating(config: GravConfig, init=None, trace: ContinuityTrace | None = None):
    """Continuation in α from the decoupled problem at α = 0.

    Parameters
    ----------
    config : GravConfig
    init : (f, kpot), optional
        A starting pair. Newton is first attempted directly at the target α
        from this pair; if that fails the continuation starts from it.

    Returns
    -------
    (GravSolution, ContinuityTrace)

    Raises
    ------
    ContinuityStalled
        When Newton fails below the target α after step halving to
        ``config.min_step``. The exception carries the trace and the last
        accepted solution.
    """
    geom, higgs, tau = config.geom, config.higgs, config.tau
    if geom.genus >= 1:
        cond = existence_conditions(geom.genus, config.alpha, tau, higgs.degree, geom.volume,
                                    higgs.divisor.max_multiplicity)
        bad = [k for k, v in cond.items() if not v]
        if bad:
            warnings.warn(f"existence conditions not met ({', '.join(bad)}); attempting anyway", RuntimeWarning)
    trace = ContinuityTrace() if trace is None else trace
    target = float(config.alpha)

    if init is not None:
        f0, p0 = (geom.project(geom.check_field(np.asarray(a, dtype=float))) for a in init)
        p0 = p0 - am_functional(geom, p0)
        system = _System(geom, higgs, tau, target)
        f, phi, kappa, it, res, ok = _newton(system, f0, p0, 0.0)
        if ok:
            sol = _finalize(system, f, phi, kappa, it, res)
            trace.append(target, it, res[0], res[1], sol.k_alpha_value)
            return sol, trace
        alpha, f, phi, kappa = 0.0, f0, p0, 0.0
        system = _System(geom, higgs, tau, 0.0)
        f, phi, kappa, it, res, ok = _newton(system, f, phi, kappa)
        if not ok:
            raise ContinuityStalled(0.0, trace, None, "ContinuityStalled: no solution at alpha = 0 from the given start")
    else:
        alpha = 0.0
        f, phi, kappa = _start(geom, higgs, tau), geom.constant(0.0), 0.0
        system = _System(geom, higgs, tau, 0.0)
        f, phi, kappa, it, res, ok = _newton(system, f, phi, kappa)
        if not ok:
            raise ContinuityStalled(0.0, trace, None, "ContinuityStalled: decoupled problem did not converge")
    sol = _finalize(system, f, phi, kappa, it, res)
    trace.append(0.0, it, res[0], res[1], sol.k_alpha_value)
    diag = {"mean_f": [], "d1_proxy": []}
    _record(diag, geom, sol)
    if target == 0.0:
        return sol, trace

    if np.ndim(config.alpha_steps) == 0:
        base_step = float(config.alpha_steps)
        waypoints = []
    else:
        waypoints = sorted(a for a in map(float, config.alpha_steps) if 0 < a < target)
        base_step = target if not waypoints else max(np.diff([0.0] + waypoints + [target]))
    step = base_step
    prev = None  # (alpha, f, phi, kappa) for the secant predictor
    while alpha < target - 1e-15:
        a_new = min(target, alpha + step)
        nxt_way = [w for w in waypoints if w > alpha + 1e-15]
        if nxt_way:
            a_new = min(a_new, nxt_way[0])
        if prev is not None and alpha > prev[0]:
            w = (a_new - alpha) / (alpha - prev[0])
            gf, gp, gk = f + w * (f - prev[1]), phi + w * (phi - prev[2]), kappa + w * (kappa - prev[3])
            if np.min(1.0 - geom.laplacian(gp)) <= 1e-8:
                gf, gp, gk = f, phi, kappa
        else:
            gf, gp, gk = f, phi, kappa
        system = _System(geom, higgs, tau, a_new)
        nf, nphi, nk, it, res, ok = _newton(system, gf, gp, gk)
        if not ok and (gf is not f):
            nf, nphi, nk, it, res, ok = _newton(system, f, phi, kappa)
        if ok:
            prev = (alpha, f, phi, kappa)
            alpha, f, phi, kappa = a_new, nf, nphi, nk
            sol = _finalize(system, f, phi, kappa, it, res)
            trace.append(alpha, it, res[0], res[1], sol.k_alpha_value)
            _record(diag, geom, sol)
            step = min(base_step, 2 * step)
        else:
            step *= 0.5
            if step < config.min_step:
                raise ContinuityStalled(alpha, trace, sol, diagnostics=diag)
    return sol, trace


@dataclass(frozen=True)
class VerifyReport:
    """Residuals of the original (unreduced) equations at a candidate solution."""

    vortex_residual: float
    curvature_residual: float
    c_spread: float
    c_mean: float
    c: float
    higgs_identity: float
    volume_identity: float
    tolerance: float = 1e-6

    @property
    def passed(self) -> bool:
        return (
            self.vortex_residual <= self.tolerance
            and self.curvature_residual <= self.tolerance
            and self.c_spread <= self.tolerance
            and abs(self.c_mean - self.c) <= 1e-8
        )

    def as_dict(self) -> dict:
        return {
            "vortex_residual": self.vortex_residual, "curvature_residual": self.curvature_residual,
            "c_spread": self.c_spread, "c_mean": self.c_mean, "c": self.c,
            "higgs_identity": self.higgs_identity, "volume_identity": self.volume_identity,
            "passed": self.passed,
        }


def verify_solution(geom, higgs, alpha, tau, sol: GravSolution, xi=None, tolerance: float = 1e-6) -> VerifyReport:
    """Check ``S_ω + α(Δ_ω + τ)(|φ|²_h − τ) = c`` and ``iF_h + ½(|φ|²_h − τ)ω = 0`` directly.

    Unlike the solver, this uses ``ω = ω₀(1 − Δ₀φ)`` from the potential and the
    Gaussian curvature formula; for a twisted solution the term
    ``−λ(Λ_ωξ − 1)`` is added.
    """
    f, kpot = geom.check_field(sol.f), geom.check_field(sol.kpot)
    om = conformal_factor(geom, kpot)
    rho = higgs.density * np.exp(2 * f)
    F = hermitian_curvature(geom, higgs, f)
    vort = geom.project(F / om + 0.5 * (rho - tau))
    S = conformal_curvature(geom, kpot)
    W = S + alpha * (geom.laplacian(rho) / om + tau * (rho - tau))
    if sol.lam != 0.0:
        xi_d = np.ones(geom.shape) if xi is None else np.asarray(xi, dtype=float)
        W = W - sol.lam * (xi_d / om - 1.0)
    W = geom.project(W)
    c = constant_c(geom.genus, alpha, tau, higgs.degree, geom.volume)
    c_mean = geom.integrate(W * om) / geom.volume
    V = geom.volume
    return VerifyReport(
        vortex_residual=float(np.max(np.abs(vort))),
        curvature_residual=float(np.max(np.abs(W - c))),
        c_spread=float(np.ptp(W)),
        c_mean=c_mean,
        c=c,
        higgs_identity=abs(geom.integrate((rho - tau) * om) + 4 * math.pi * higgs.degree) / (4 * math.pi * higgs.degree),
        volume_identity=abs(geom.integrate(om) - V) / V,
        tolerance=tolerance,
    )


def solve_twisted(config: GravConfig, xi, lam: float, init: GravSolution | None = None, max_lambda=None) -> GravSolution:
    """Solve the twisted system ``S_ω + αΔ_ω|φ|²_h − 2ατΛ_ωiF_h − λ(Λ_ωξ − 1) = c``.

    ``xi`` is the density of ξ against ω₀ (positive, total mass V). The
    solution is continued in λ from the untwisted solution (``init`` or a
    fresh continuation in α).
    """
    geom = config.geom
    xi = np.asarray(xi, dtype=float) * np.ones(geom.shape)
    if np.min(xi) <= 0 or abs(geom.integrate(xi) - geom.volume) > 1e-8 * geom.volume:
        raise ValueError("xi must be a positive density with total mass V")
    bound = 0.2 * abs(config.c) + 0.1 if max_lambda is None else max_lambda
    if abs(lam) > bound:
        raise ValueError(f"|lambda| = {abs(lam)} exceeds the small-twist bound {bound:.3g}")
    base = init if init is not None else solve_gravitating(config)[0]
    if lam == 0.0:
        return base
    f, phi, kappa = base.f, base.kpot, 0.0
    if abs(base.multiplier) > 0:
        kappa = base.multiplier
    cur, step = 0.0, lam
    while cur != lam:
        nxt = lam if abs(lam - cur) <= abs(step) else cur + step
        system = _System(geom, config.higgs, config.tau, config.alpha, nxt, xi)
        nf, nphi, nk, it, res, ok = _newton(system, f, phi - am_functional(geom, phi), kappa)
        if ok:
            f, phi, kappa, cur = nf, nphi, nk, nxt
            sol = _finalize(system, f, phi, kappa, it, res)
            phi, kappa = sol.kpot, sol.multiplier
        else:
            step *= 0.5
            if abs(step) < 1e-6:
                raise RuntimeError(f"twisted Newton failed near lambda = {nxt:.6g}")
    return sol


def futaki_closed_form(alpha: float, tau: float, N: int, n1: int, V: float) -> float:
    """2ατ(N − 2n₁)(V − 4πN/τ) for the degeneration with multiplicity n₁ at the fixed point."""
    if not V > 4 * math.pi * N / tau:
        raise ValueError("futaki_closed_form needs V > 4*pi*N/tau")
    return 2 * alpha * tau * (N - 2 * n1) * (V - 4 * math.pi * N / tau)


def check_polystability(divisor: Divisor):
    """GIT classification of an effective divisor on the projective line.

    Returns ``(verdict, witness)`` where verdict is ``"stable"`` (every
    multiplicity below N/2), ``"polystable"`` (exactly two points of
    multiplicity N/2) or ``"unstable"``. The witness is the offending point
    with its multiplicity, the balanced pair, or ``None``.
    """
    N = divisor.degree
    pairs = list(zip(divisor.points, divisor.multiplicities))
    worst = max(pairs, key=lambda pm: pm[1])
    if 2 * worst[1] < N:
        return "stable", None
    if 2 * worst[1] == N and len(pairs) == 2:
        return "polystable", tuple(pairs)
    return "unstable", worst
