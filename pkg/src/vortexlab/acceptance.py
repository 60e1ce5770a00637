"""
Acceptance checks shared by the test suite and ``vortexlab selftest``.

Each criterion is a function ``(rng, fast) -> (passed, detail)``. The
``fast`` flag selects smaller sample counts and grids for the self-test;
the pytest acceptance suite always runs the full versions. Randomness comes
from a counter-based generator so that the same seed yields the same draws
on every platform.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import energy, geodesics, gravity, vortex
from .higgs import Divisor, build_higgs_explicit_sphere, build_higgs_green
from .surface import build_sphere, build_torus

__all__ = [
    "CheckResult",
    "CRITERIA",
    "make_rng",
    "run_criterion",
    "gradient_consistency",
    "hilbert_mumford_verdict",
    "integer_partitions",
    "selftest",
]


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Philox generator keyed by ``(seed, stream)``."""
    return np.random.Generator(np.random.Philox(key=[int(seed), int(stream)]))


@dataclass(frozen=True)
class CheckResult:
    key: str
    title: str
    passed: bool
    detail: str
    seconds: float

    def line(self, timing: bool = True) -> str:
        tag = "PASS" if self.passed else "FAIL"
        extra = f" ({self.seconds:.1f} s)" if timing else ""
        return f"{tag} {self.key} {self.title}: {self.detail}{extra}"


# ---------------------------------------------------------------------------
# shared fixtures
# ---------------------------------------------------------------------------

_CACHE: dict = {}


def _torus(n=128, volume=30.0, modulus=1j):
    key = ("torus", n, volume, modulus)
    if key not in _CACHE:
        _CACHE[key] = build_torus(modulus, volume, n)
    return _CACHE[key]


def _sphere(L=32, volume=50.0):
    key = ("sphere", L, volume)
    if key not in _CACHE:
        _CACHE[key] = build_sphere(volume, L)
    return _CACHE[key]


def _torus_higgs(geom, points=(0.5 + 0.5j,), mult=(1,)):
    return build_higgs_green(geom, Divisor(points, mult))


def _vortex_battery(fast: bool):
    """Converged vortex solves on both surfaces, flat and perturbed backgrounds (fixed draws)."""
    key = ("battery", fast)
    if key in _CACHE:
        return _CACHE[key]
    rng = make_rng(0, 3)
    cases = []
    gt = _torus(64 if fast else 128)
    cases.append((gt, _torus_higgs(gt), 1.0, None))
    cases.append((gt, _torus_higgs(gt, (0.5 + 0.5j, 3.0 + 2.5j), (1, 1)), 1.5, gt.random_potential(rng, 3, 0.5)))
    gt2 = _torus(64, 40.0, 0.3 + 1.1j)
    cases.append((gt2, _torus_higgs(gt2, (1.0 + 1.0j,), (2,)), 2.0, gt2.random_potential(rng, 3, 0.6)))
    gs = _sphere(32, 50.0)
    cases.append((gs, build_higgs_explicit_sphere(gs, Divisor((0, 1, -1), (1, 1, 1))), 1.0, None))
    cases.append((gs, build_higgs_explicit_sphere(gs, Divisor((0, math.inf), (1, 1))), 1.0, gs.random_potential(rng, 3, 0.5)))
    if not fast:
        for _ in range(3):
            cases.append((gt, _torus_higgs(gt), 1.0, gt.random_potential(rng, 4, 0.7)))
    sols = [vortex.solve_vortex(vortex.VortexProblem(g, h, tau, kp)) for g, h, tau, kp in cases]
    _CACHE[key] = sols
    return sols


# ---------------------------------------------------------------------------
# criteria
# ---------------------------------------------------------------------------


def c01_degree_identity(rng, fast):
    t0 = time.perf_counter()
    g = _torus(128)
    sol = vortex.solve_vortex(vortex.VortexProblem(g, _torus_higgs(g), 1.0))
    dt = time.perf_counter() - t0
    target = 30 - 4 * math.pi
    rel = abs(sol.degree_integral() - target) / target
    return rel <= 1e-6 and dt <= 10, f"rel_err = {rel:.2e}, runtime <= 10 s: {dt <= 10}"


def c02_bradlow(rng, fast):
    t0 = time.perf_counter()
    g = build_torus(1j, 10.0, 64)
    try:
        vortex.solve_vortex(vortex.VortexProblem(g, _torus_higgs(g, (0.5 + 0.5j,)), 1.0))
    except vortex.BradlowViolated:
        dt = time.perf_counter() - t0
        return dt <= 60, "BradlowViolated raised"
    return False, "solver returned without raising"


def c03_pointwise_bound(rng, fast):
    worst = -math.inf
    sols = _vortex_battery(fast)
    for s in sols:
        worst = max(worst, s.pointwise_max / s.problem.tau - 1)
    return worst <= 1e-8, f"{len(sols)} solves, max(sup|phi|^2_h/tau) - 1 = {worst:.2e}"


def c04_mhat_convexity(rng, fast):
    g = _torus(32, 30.0)
    h = _torus_higgs(g)
    count = 10 if fast else 50
    worst = math.inf
    ok = True
    s = np.linspace(0.0, 1.0, 11)
    for _ in range(count):
        kp = g.random_potential(rng, 3, float(rng.uniform(0.1, 0.8)))
        prob = vortex.VortexProblem(g, h, 1.0, kp)
        fa = g.random_field(rng, 3, float(rng.uniform(0.1, 2.0)))
        fb = g.random_field(rng, 3, float(rng.uniform(0.1, 2.0))) + float(rng.normal())
        vals = np.array([vortex.mhat_energy(prob, fa + si * (fb - fa)) for si in s])
        d2 = vals[2:] - 2 * vals[1:-1] + vals[:-2]
        worst = min(worst, float(d2.min()))
        ok &= bool(np.all(d2 >= 1e-12))
    return ok, f"{count} segments, min second difference = {worst:.3e}"


def _random_jet(g, rng, scale=0.3):
    f = g.random_field(rng, 3, 0.5)
    kp = g.random_potential(rng, 3, 0.4)
    f1 = g.random_field(rng, 3, scale)
    p1 = g.random_potential(rng, 3, scale)
    f2 = g.random_field(rng, 3, scale)
    p2 = g.random_potential(rng, 3, scale)
    return f, kp, f1, p1, f2, p2


def _pair_setup(fast):
    g = _torus(32, 30.0)
    return g, _torus_higgs(g, (0.5 + 0.5j, 2.0 + 3.5j), (1, 1)), 0.3, 1.0


def c05_second_variation(rng, fast):
    g, h, alpha, tau = _pair_setup(fast)
    count = 4 if fast else 10
    worst = 0.0
    for _ in range(count):
        f, kp, f1, p1, f2, p2 = _random_jet(g, rng)

        def k(t):
            return energy.k_alpha_pair(g, h, alpha, tau, f + t * f1 + 0.5 * t * t * f2, kp + t * p1 + 0.5 * t * t * p2)

        def d2(hs):
            return (k(hs) - 2 * k(0.0) + k(-hs)) / hs**2

        fd = (4 * d2(1e-3) - d2(2e-3)) / 3
        an = energy.second_variation_terms(g, h, alpha, tau, (f, kp, f1, p1, f2, p2)).total
        worst = max(worst, abs(an - fd) / max(abs(fd), 1e-12))
    return worst <= 1e-4, f"{count} jets, max relative error = {worst:.2e}"


def c06_hessian_symmetry(rng, fast):
    g, h, alpha, tau = _pair_setup(fast)
    count = 4 if fast else 10
    worst = 0.0
    for _ in range(count):
        f, kp = g.random_field(rng, 3, 0.5), g.random_potential(rng, 3, 0.4)
        u = (g.random_field(rng, 3, 0.3), g.random_potential(rng, 3, 0.3))
        v = (g.random_field(rng, 3, 0.3), g.random_potential(rng, 3, 0.3))

        def dgrad(a, b, hs):
            # derivative of ⟨∇K̃_α, b⟩ in direction a, central differences
            def pair(s):
                gf, gp = energy.pair_gradient(g, h, alpha, tau, f + s * a[0], kp + s * a[1])
                return g.inner(gf, b[0]) + g.inner(gp, b[1])

            return (pair(hs) - pair(-hs)) / (2 * hs)

        def rich(a, b):
            return (4 * dgrad(a, b, 5e-4) - dgrad(a, b, 1e-3)) / 3

        huv, hvu = rich(u, v), rich(v, u)
        scale = max(abs(huv), abs(hvu), 1.0)
        worst = max(worst, abs(huv - hvu) / scale)
    return worst <= 1e-8, f"{count} direction pairs, max |H(u,v) - H(v,u)|/scale = {worst:.2e}"


def c07_futaki_slope(rng, fast):
    t0 = time.perf_counter()
    L = 32 if fast else 64
    g = _sphere(L, 50.0)
    alpha, tau = 0.05, 1.0
    times = np.arange(0.0, 6.0 + 1e-12, 0.25)
    ray = geodesics.OnePSRay(g.volume)
    h3 = build_higgs_explicit_sphere(g, Divisor((0, 1, -1), (1, 1, 1)))
    prof = geodesics.ray_k_alpha_profile(g, h3, alpha, tau, ray, times)
    slope = geodesics.ray_slope_limit(prof)
    target = gravity.futaki_closed_form(alpha, tau, 3, 1, g.volume)
    rel = abs(slope - target) / abs(target)
    h2 = build_higgs_explicit_sphere(g, Divisor((0, 1), (1, 1)))
    slope2 = geodesics.ray_slope_limit(geodesics.ray_k_alpha_profile(g, h2, alpha, tau, ray, times))
    ratio = abs(slope2) / abs(slope)
    dt = time.perf_counter() - t0
    ok = rel <= 0.02 and ratio <= 0.02 and dt <= 300
    return ok, (f"slope = {slope:.10g} vs {target:.10g} (rel {rel:.2e}); "
                f"balanced slope/|slope| = {ratio:.2e}; runtime <= 300 s: {dt <= 300}")


def c08_j_functional(rng, fast):
    g = _sphere(64, 50.0)
    ray = geodesics.OnePSRay(g.volume)
    d8 = energy.j_xi_derivative(g, 1.0, ray.velocity(g, 8.0), ray.conformal_factor(g, 8.0))
    d0 = energy.j_xi_derivative(g, 1.0, ray.velocity(g, 0.0), ray.conformal_factor(g, 0.0))
    target = g.volume**2 / (2 * math.pi)
    rel = abs((d8 - d0) - target) / target
    return rel <= 0.01, f"[dJ/dt] = {d8 - d0:.10g} vs V^2/2pi = {target:.10g} (rel {rel:.2e})"


def c09_geodesic_residual(rng, fast):
    g = _sphere(64, 50.0)
    dt = 1e-3
    worst = 0.0
    for t in (0.1, 0.3, 0.6, 1.0):
        samples = [geodesics.fs_ray_potential(g, t + k * dt) for k in (-1, 0, 1)]
        worst = max(worst, geodesics.geodesic_residual(g, samples, dt))
    return worst <= 1e-5 * g.volume, f"max residual / V = {worst / g.volume:.2e}"


def c10_epsilon_convexity(rng, fast):
    g = _sphere(24 if fast else 32, 50.0)
    alpha, tau, eps = 0.05, 1.0, 0.05
    h = build_higgs_explicit_sphere(g, Divisor((0, 1, -1), (1, 1, 1)))
    M = 17 if fast else 33
    geo = geodesics.solve_epsilon_geodesic(g, g.constant(0.0), geodesics.fs_ray_potential(g, 0.5), eps, M)
    m = geodesics.m_alpha_along(g, h, alpha, tau, geo.fields)
    dt = geo.times[1] - geo.times[0]
    m2 = (m[2:] - 2 * m[1:-1] + m[:-2]) / dt**2
    bound = -4 * math.pi * alpha * tau * h.degree * eps - 1e-5
    return bool(np.all(m2 >= bound)), f"min M'' = {m2.min():.4g} vs bound {bound:.4g} (geodesic residual {geo.residual_sup:.1e})"


def _c11_solve():
    if "c11" not in _CACHE:
        g = _torus(128)
        h = _torus_higgs(g)
        t0 = time.perf_counter()
        sol, trace = gravity.solve_gravitating(gravity.GravConfig(g, h, 1.0, 0.3))
        _CACHE["c11"] = (g, h, sol, trace, time.perf_counter() - t0)
    return _CACHE["c11"]


def c11_gravitating(rng, fast):
    g, h, sol, trace, dt = _c11_solve()
    rep = gravity.verify_solution(g, h, 0.3, 1.0, sol)
    ok = (trace.alphas[-1] == 0.3 and max(sol.residual_sup) <= 1e-8 and rep.passed and dt <= 300)
    return ok, (f"alpha = {trace.alphas[-1]}, residuals = {max(sol.residual_sup):.1e}, "
                f"verify = {rep.passed} (max {max(rep.vortex_residual, rep.curvature_residual):.1e}), "
                f"runtime <= 300 s: {dt <= 300}")


def c12_uniqueness(rng, fast):
    g, h, sol, _, _ = _c11_solve()
    init = (g.random_field(rng, 3, 0.5), g.random_potential(rng, 3, 0.4))
    other, _ = gravity.solve_gravitating(gravity.GravConfig(g, h, 1.0, 0.3), init=init)
    d = max(float(np.max(np.abs(sol.f - other.f))), float(np.max(np.abs(sol.kpot - other.kpot))))
    return d <= 1e-6, f"sup-norm difference = {d:.2e}"


def integer_partitions(n: int, largest: int | None = None):
    """All partitions of ``n`` as non-increasing tuples."""
    largest = n if largest is None else largest
    if n == 0:
        yield ()
        return
    for k in range(min(n, largest), 0, -1):
        for rest in integer_partitions(n - k, k):
            yield (k,) + rest


def _poly_from_roots(roots):
    """Coefficients (constant term first) of Π(z − r) with exact rationals."""
    c = [Fraction(1)]
    for r in roots:
        nxt = [Fraction(0)] * (len(c) + 1)
        for i, a in enumerate(c):
            nxt[i + 1] += a
            nxt[i] -= r * a
        c = nxt
    return c


def hilbert_mumford_verdict(points, mults):
    """Brute-force GIT verdict from Hilbert–Mumford weights of every 1-PS.

    ``points`` are rationals or ``None`` (the point at infinity). For every
    ordered pair (p, q) of distinct fixed points drawn from the support plus
    two generic points, the binary form is written in coordinates where p = 0
    and q = ∞ (Möbius map ``z ↦ (z − p)/(z − q)``), the weights ``N − 2k`` of
    its nonzero monomials ``x^k y^{N−k}`` are collected, and the form is
    destabilizing if all weights have one strict sign. When an extreme weight
    is zero the λ-limit is the balanced divisor (N/2)p + (N/2)q, and the
    orbit is closed only if D is projectively equivalent to it.
    """
    N = sum(mults)
    cand = list(points) + [Fraction(1009, 7), Fraction(-2003, 11)]
    strictly = True
    for p, q in itertools.permutations(cand, 2):
        roots, at_inf = [], 0
        for r, m in zip(points, mults):
            if r == p:
                roots += [Fraction(0)] * m
            elif r == q:
                at_inf += m
            elif r is None:
                roots += [Fraction(1)] * m  # (z − p)/(z − q) → 1 as z → ∞
            elif q is None:
                roots += [r - p] * m
            elif p is None:
                roots += [Fraction(1) / (r - q)] * m
            else:
                roots += [(r - p) / (r - q)] * m
        coeffs = _poly_from_roots(roots)
        weights = [N - 2 * k for k, a in enumerate(coeffs) if a != 0]
        assert len(coeffs) - 1 + at_inf == N
        if max(weights) < 0 or min(weights) > 0:
            return "unstable"
        if max(weights) == 0 or min(weights) == 0:
            strictly = False
            # the limit keeps only the weight-0 monomial x^{N/2}y^{N/2}, i.e. the
            # divisor (N/2)p + (N/2)q; PGL₂ acts 3-transitively, so the orbit of D
            # is closed under this λ iff D is also supported at two points of weight N/2
            if sorted(mults) != [N // 2, N // 2]:
                return "unstable"
    return "stable" if strictly else "polystable"


def c13_stability(rng, fast):
    checked = 0
    bad = []
    for N in range(1, 9):
        for part in integer_partitions(N):
            for with_inf in (False, True):
                pts = [Fraction(j) for j in range(len(part))]
                if with_inf:
                    pts[-1] = None
                oracle = hilbert_mumford_verdict(pts, part)
                div = Divisor([math.inf if p is None else float(p) for p in pts], part)
                verdict, _ = gravity.check_polystability(div)
                checked += 1
                if verdict != oracle:
                    bad.append((part, with_inf, verdict, oracle))
    return not bad, f"{checked} divisors, disagreements = {len(bad)}"


def c14_vortex_map_stability(rng, fast):
    g = _torus(64 if fast else 128)
    h = _torus_higgs(g)
    prob = vortex.VortexProblem(g, h, 1.0)
    count = 4 if fast else 10
    worst = 0.0
    for _ in range(count):
        ka = g.random_potential(rng, 3, float(rng.uniform(0.1, 0.7)))
        kb = ka + g.random_potential(rng, 3, float(rng.uniform(0.01, 0.2)))
        if np.min(1 - g.laplacian(kb)) <= 0.05:
            kb = ka + 0.5 * (kb - ka)
        lhs, rhs = vortex.vortex_stability_bound(prob, ka, kb)
        worst = max(worst, lhs / rhs)
    return worst <= 1 + 1e-6, f"{count} pairs, max lhs/rhs = {worst:.3e}"


def c15_curvature_l2(rng, fast):
    worst = 0.0
    sols = _vortex_battery(fast)
    for s in sols:
        g, tau, N = s.problem.geom, s.problem.tau, s.problem.degree
        val = 0.5 * g.integrate(g.grad_norm2(s.density))
        worst = max(worst, val / (2 * math.pi * tau**2 * N))
    return worst <= 1 + 1e-6, f"{len(sols)} solves, max ratio to 2 pi tau^2 N = {worst:.4f}"


def _padded_w12(coarse, fine):
    """W^{1,2} norm of the spectral interpolant difference, evaluated on the finer grid."""
    gc, uc = coarse
    gf, uf = fine
    cc = np.fft.fft2(uc) / gc.n**2
    cf = np.fft.fft2(uf) / gf.n**2
    pad = np.zeros_like(cf)
    k = np.fft.fftfreq(gc.n, 1.0 / gc.n).astype(int)
    idx = np.ix_(k % gf.n, k % gf.n)
    nyq = gc.n // 2
    keep = np.ones((gc.n, gc.n))
    keep[nyq, :] = 0
    keep[:, nyq] = 0
    pad[idx] = cc * keep
    d = np.real(np.fft.ifft2(pad - cf)) * gf.n**2
    return math.sqrt(gf.integrate(d * d) + gf.integrate(gf.grad_norm2(d)))


def c16_grid_convergence(rng, fast):
    fields = []
    for n in (64, 128, 256):
        g = build_torus(1j, 30.0, n)
        h = _torus_higgs(g)
        sol = vortex.solve_vortex(vortex.VortexProblem(g, h, 1.0))
        fields.append((g, sol.f + 0.5 * h.shift))
    e1 = _padded_w12(fields[0], fields[1])
    e2 = _padded_w12(fields[1], fields[2])
    ratio = e1 / max(e2, 1e-300)
    return ratio >= 4, f"W12 differences {e1:.2e} (64->128), {e2:.2e} (128->256), ratio {ratio:.2e}"


CRITERIA = {
    1: ("degree identity", c01_degree_identity),
    2: ("Bradlow obstruction", c02_bradlow),
    3: ("pointwise bound", c03_pointwise_bound),
    4: ("strict convexity of M-hat", c04_mhat_convexity),
    5: ("second variation vs finite differences", c05_second_variation),
    6: ("Hessian symmetry", c06_hessian_symmetry),
    7: ("Futaki slope", c07_futaki_slope),
    8: ("J-functional closed value", c08_j_functional),
    9: ("geodesic residual", c09_geodesic_residual),
    10: ("epsilon-geodesic convexity", c10_epsilon_convexity),
    11: ("gravitating existence, genus 1", c11_gravitating),
    12: ("uniqueness", c12_uniqueness),
    13: ("stability classifier", c13_stability),
    14: ("stability of the vortex map", c14_vortex_map_stability),
    15: ("curvature L2 bound", c15_curvature_l2),
    16: ("grid convergence", c16_grid_convergence),
}

FAST = tuple(CRITERIA)


def run_criterion(number: int, seed: int = 0, fast: bool = False) -> CheckResult:
    """Run one acceptance criterion with its own random stream."""
    title, fn = CRITERIA[number]
    rng = make_rng(seed, 100 + number)
    t0 = time.perf_counter()
    try:
        passed, detail = fn(rng, fast)
    except Exception as exc:  # a crashing check is a failing check
        passed, detail = False, f"{type(exc).__name__}: {exc}"
    return CheckResult(f"criterion-{number:02d}", title, bool(passed), detail, time.perf_counter() - t0)


def gradient_consistency(seed: int = 0) -> CheckResult:
    """Directional finite differences of M̂ and K̃_α against their analytic gradients."""
    rng = make_rng(seed, 7)
    t0 = time.perf_counter()
    g = _torus(32, 30.0)
    h = _torus_higgs(g)
    worst = 0.0
    for _ in range(3):
        kp = g.random_potential(rng, 3, 0.4)
        prob = vortex.VortexProblem(g, h, 1.0, kp)
        f = g.random_field(rng, 3, 0.5)
        v = g.random_field(rng, 3, 0.5)
        hs = 1e-4
        fd = (vortex.mhat_energy(prob, f + hs * v) - vortex.mhat_energy(prob, f - hs * v)) / (2 * hs)
        an = g.inner(vortex.mhat_gradient(prob, f), v)
        worst = max(worst, abs(fd - an) / max(abs(fd), 1e-12))
        p = g.random_potential(rng, 3, 0.2)
        kfun = lambda s: energy.k_alpha_pair(g, h, 0.3, 1.0, f + s * v, kp + s * p)  # noqa: E731
        fd = (kfun(hs) - kfun(-hs)) / (2 * hs)
        gf, gp = energy.pair_gradient(g, h, 0.3, 1.0, f, kp)
        an = g.inner(gf, v) + g.inner(gp, p)
        worst = max(worst, abs(fd - an) / max(abs(fd), 1e-12))
    return CheckResult("gradient-consistency", "analytic gradients vs finite differences", worst <= 1e-6,
                       f"max relative error = {worst:.1e}", time.perf_counter() - t0)


def selftest(seed: int = 0, criteria=FAST, timing: bool = False):
    """Run the fast checks; returns ``(lines, all_passed)``."""
    results = [gradient_consistency(seed)]
    results += [run_criterion(i, seed, fast=True) for i in criteria]
    lines = [r.line(timing) for r in results]
    return lines, all(r.passed for r in results)
