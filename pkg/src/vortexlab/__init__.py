"""
vortexlab: numerical gravitating vortices on compact Riemann surfaces.

Modules
-------
surface    constant-curvature torus and sphere discretizations
higgs      divisors and the reference Higgs data log|φ|²_{h₀}
vortex     the abelian vortex equation at a fixed Kähler potential
energy     K-energy, M_α, the α-K-energy and their variations
geodesics  rays, ε-geodesics and K_α profiles on the sphere
gravity    continuity method for the coupled system, stability of divisors
cli        config-driven experiment runner
"""

__version__ = "0.1.0"

from .surface import build_sphere, build_torus
from .higgs import Divisor, build_higgs_explicit_sphere, build_higgs_green, parse_divisor
from .vortex import BradlowViolated, VortexProblem, solve_vortex
from .gravity import ContinuityStalled, GravConfig, solve_gravitating, verify_solution

__all__ = [
    "__version__",
    "build_sphere",
    "build_torus",
    "Divisor",
    "parse_divisor",
    "build_higgs_green",
    "build_higgs_explicit_sphere",
    "BradlowViolated",
    "VortexProblem",
    "solve_vortex",
    "ContinuityStalled",
    "GravConfig",
    "solve_gravitating",
    "verify_solution",
]
