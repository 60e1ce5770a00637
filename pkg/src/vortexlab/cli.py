"""
Config-driven experiment runner.

``vortexlab run <config>`` reads an INI-style file with ``[section]`` headers
and ``key = value`` pairs, writes the resolved configuration, field dumps,
CSV profiles and a ``report.txt`` of ``key = value`` lines into the output
directory, and exits with 0 (success), 2 (continuation stalled) or 1
(error). ``vortexlab selftest`` runs the fast acceptance checks and
``vortexlab schema`` prints the configuration schema.
"""

from __future__ import annotations

import argparse
import configparser
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__, acceptance, energy, geodesics, gravity
from .higgs import build_higgs_explicit_sphere, build_higgs_green, parse_divisor
from .surface import AdmissibilityError, build_sphere, build_torus, write_field
from .vortex import BradlowViolated, VortexProblem, mhat_energy, solve_vortex

__all__ = ["SCHEMA", "EXPERIMENTS", "load_config", "run", "main", "ConfigError"]

EXPERIMENTS = (
    "solve-vortex",
    "solve-gravitating",
    "solve-twisted",
    "ray-slope",
    "convexity-scan",
    "epsilon-geodesic",
    "stability",
    "energy-report",
)

# section -> key -> (type, default, help); a default of None means required
SCHEMA = {
    "run": {
        "experiment": (str, None, "one of: " + ", ".join(EXPERIMENTS)),
        "output": (str, "vortexlab-out", "output directory"),
        "seed": (int, 0, "seed for randomized checks (Philox counter-based generator)"),
    },
    "surface": {
        "genus": (int, 1, "0 (round sphere) or 1 (flat torus)"),
        "volume": (float, 30.0, "total area V"),
        "resolution": (int, 128, "torus grid size n, or sphere band limit L"),
        "modulus": (complex, 1j, "torus modulus in the upper half plane, e.g. 0.3+1.1j"),
    },
    "divisor": {
        "points": (str, None, "one 'x y multiplicity' or 'inf multiplicity' per line"),
    },
    "physics": {
        "tau": (float, 1.0, "symmetry breaking parameter tau > 0"),
        "alpha": (float, 0.0, "coupling constant alpha >= 0"),
        "lambda": (float, 0.0, "twisting parameter for solve-twisted"),
        "epsilon": (float, 0.05, "epsilon for epsilon-geodesic"),
    },
    "options": {
        "alpha_step": (float, 0.05, "initial continuation step in alpha"),
        "t_max": (float, 6.0, "largest ray time for ray-slope"),
        "t_step": (float, 0.25, "ray time spacing for ray-slope"),
        "samples": (int, 20, "random potentials for convexity-scan"),
        "time_nodes": (int, 33, "time nodes of the epsilon-geodesic"),
        "ray_time": (float, 0.5, "endpoint of the epsilon-geodesic on the ray"),
        "xi_amplitude": (float, 0.3, "relative amplitude of the random twisting density"),
    },
}


class ConfigError(ValueError):
    """Schema violation in a run configuration."""


def _convert(kind, raw, where):
    try:
        if kind is complex:
            return complex(raw.replace(" ", ""))
        return kind(raw)
    except ValueError as exc:
        raise ConfigError(f"{where}: cannot read {raw!r} as {kind.__name__}") from exc


def load_config(text: str) -> dict:
    """Parse and validate configuration text; returns a nested dict with every default filled."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config syntax: {exc}") from exc
    out = {}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        for key in parser[section]:
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key '{key}' in [{section}]")
    for section, keys in SCHEMA.items():
        out[section] = {}
        for key, (kind, default, _) in keys.items():
            if parser.has_option(section, key):
                out[section][key] = _convert(kind, parser[section][key].strip(), f"[{section}] {key}")
            elif default is None:
                raise ConfigError(f"missing required key '{key}' in [{section}]")
            else:
                out[section][key] = default
    exp = out["run"]["experiment"]
    if exp not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {exp!r}")
    if out["surface"]["genus"] not in (0, 1):
        raise ConfigError("genus must be 0 or 1")
    if not out["surface"]["volume"] > 0:
        raise ConfigError("volume must be positive")
    if not out["physics"]["tau"] > 0:
        raise ConfigError("tau must be positive")
    if not out["physics"]["alpha"] >= 0:
        raise ConfigError("alpha must be nonnegative")
    if out["surface"]["genus"] == 1 and not out["surface"]["modulus"].imag > 0:
        raise ConfigError("modulus must lie in the upper half plane")
    out["divisor"]["parsed"] = parse_divisor(out["divisor"]["points"])
    return out


def _resolved_text(cfg: dict) -> str:
    lines = [f"# vortexlab {__version__} resolved configuration"]
    for section, keys in SCHEMA.items():
        lines.append(f"[{section}]")
        for key in keys:
            val = cfg[section][key]
            if key == "points":
                body = "\n".join("    " + ln.strip() for ln in str(val).strip().splitlines())
                lines.append(f"{key} =\n{body}")
            elif isinstance(val, float):
                lines.append(f"{key} = {val:.17g}")
            else:
                lines.append(f"{key} = {val}")
        lines.append("")
    return "\n".join(lines)


def _geometry(cfg):
    s = cfg["surface"]
    if s["genus"] == 1:
        return build_torus(s["modulus"], s["volume"], s["resolution"])
    return build_sphere(s["volume"], s["resolution"])


def _higgs(cfg, geom):
    div = cfg["divisor"]["parsed"]
    if cfg["surface"]["genus"] == 0:
        return build_higgs_explicit_sphere(geom, div)
    return build_higgs_green(geom, div)


def _exp_solve_vortex(cfg, out, rng):
    geom = _geometry(cfg)
    higgs = _higgs(cfg, geom)
    tau = cfg["physics"]["tau"]
    sol = solve_vortex(VortexProblem(geom, higgs, tau))
    write_field(out / "f.field", geom, sol.f)
    g = geom
    return {
        "residual_sup": sol.residual_sup,
        "degree_integral": sol.degree_integral(),
        "degree_defect": sol.degree_defect,
        "degree_defect_relative": sol.degree_defect / (tau * g.volume - 4 * math.pi * higgs.degree),
        "pointwise_max": sol.pointwise_max,
        "curvature_l2": 0.5 * g.integrate(g.grad_norm2(sol.density)),
        "iterations": sol.iterations,
    }


def _grav_config(cfg, geom, higgs):
    p = cfg["physics"]
    return gravity.GravConfig(geom, higgs, p["tau"], p["alpha"], alpha_steps=cfg["options"]["alpha_step"])


def _grav_report(geom, higgs, cfg, sol, out, trace=None, xi=None):
    p = cfg["physics"]
    write_field(out / "f.field", geom, sol.f)
    write_field(out / "kpot.field", geom, sol.kpot)
    if trace is not None:
        (out / "continuity.csv").write_text(trace.to_csv())
    rep = gravity.verify_solution(geom, higgs, p["alpha"], p["tau"], sol, xi=xi)
    vals = {
        "alpha": sol.alpha, "c": sol.c, "lambda": sol.lam,
        "residual_f": sol.residual_sup[0], "residual_kpot": sol.residual_sup[1],
        "k_alpha": sol.k_alpha_value, "multiplier": sol.multiplier,
    }
    vals.update({f"verify_{k}": v for k, v in rep.as_dict().items()})
    return vals


def _exp_solve_gravitating(cfg, out, rng):
    geom = _geometry(cfg)
    higgs = _higgs(cfg, geom)
    trace = gravity.ContinuityTrace()
    try:
        sol, trace = gravity.solve_gravitating(_grav_config(cfg, geom, higgs), trace=trace)
    except gravity.ContinuityStalled as exc:
        (out / "continuity.csv").write_text(exc.trace.to_csv())
        raise
    return _grav_report(geom, higgs, cfg, sol, out, trace)


def _exp_solve_twisted(cfg, out, rng):
    geom = _geometry(cfg)
    higgs = _higgs(cfg, geom)
    amp = cfg["options"]["xi_amplitude"]
    u = geom.random_field(rng, 3, 1.0)
    xi = 1.0 + amp * u / max(np.max(np.abs(u)), 1e-300)
    xi *= geom.volume / geom.integrate(xi)
    write_field(out / "xi.field", geom, xi)
    sol = gravity.solve_twisted(_grav_config(cfg, geom, higgs), xi, cfg["physics"]["lambda"])
    return _grav_report(geom, higgs, cfg, sol, out, xi=xi)


def _need_sphere(cfg, what):
    if cfg["surface"]["genus"] != 0:
        raise ConfigError(f"{what} needs genus = 0")


def _ray_n1(div):
    """Multiplicity at the fixed point 0 of the flow z ↦ e^{2t}z."""
    return div.multiplicity_at(0)


def _exp_ray_slope(cfg, out, rng):
    _need_sphere(cfg, "ray-slope")
    geom = _geometry(cfg)
    higgs = _higgs(cfg, geom)
    p, o = cfg["physics"], cfg["options"]
    times = np.arange(0.0, o["t_max"] + 1e-12, o["t_step"])
    prof = geodesics.ray_k_alpha_profile(geom, higgs, p["alpha"], p["tau"], geodesics.OnePSRay(geom.volume), times)
    (out / "ray_profile.csv").write_text(prof.to_csv())
    at = tuple(float(times[int(round(k * (len(times) - 1)))]) for k in (2 / 3, 5 / 6, 1.0))
    slope = geodesics.ray_slope_limit(prof, at=at)
    div = higgs.divisor
    vals = {"slope": slope, "n1": _ray_n1(div)}
    vals["futaki_closed_form"] = gravity.futaki_closed_form(p["alpha"], p["tau"], div.degree, _ray_n1(div), geom.volume)
    vals["k_alpha_convex"] = bool(np.all(np.diff(prof.k_alpha_prime) >= -1e-9))
    return vals


def _exp_convexity_scan(cfg, out, rng):
    """Second differences of M̂ along random affine segments over random backgrounds."""
    geom = _geometry(cfg)
    higgs = _higgs(cfg, geom)
    p = cfg["physics"]
    kpot0 = geom.constant(0.0)
    f0 = solve_vortex(VortexProblem(geom, higgs, p["tau"], kpot0)).f
    base = energy.k_alpha_reduced(geom, higgs, p["alpha"], p["tau"], kpot0).k_alpha
    rows = ["sample,min_second_difference"]
    worst = math.inf
    s = np.linspace(0.0, 1.0, 9)
    for k in range(cfg["options"]["samples"]):
        kp = geom.random_potential(rng, 3, 0.5)
        prob = VortexProblem(geom, higgs, p["tau"], kp)
        fb = f0 + geom.random_field(rng, 3, 0.5)
        vals = np.array([mhat_energy(prob, f0 + t * (fb - f0)) for t in s])
        d2 = float(np.min(vals[2:] - 2 * vals[1:-1] + vals[:-2]))
        worst = min(worst, d2)
        rows.append(f"{k},{d2:.17g}")
    (out / "convexity.csv").write_text("\n".join(rows) + "\n")
    return {"k_alpha_at_zero": base, "min_second_difference": worst, "convex": worst >= 0}


def _exp_epsilon_geodesic(cfg, out, rng):
    _need_sphere(cfg, "epsilon-geodesic")
    geom = _geometry(cfg)
    higgs = _higgs(cfg, geom)
    p, o = cfg["physics"], cfg["options"]
    geo = geodesics.solve_epsilon_geodesic(geom, geom.constant(0.0), geodesics.fs_ray_potential(geom, o["ray_time"]),
                                           p["epsilon"], o["time_nodes"])
    m = geodesics.m_alpha_along(geom, higgs, p["alpha"], p["tau"], geo.fields)
    dt = geo.times[1] - geo.times[0]
    m2 = (m[2:] - 2 * m[1:-1] + m[:-2]) / dt**2
    rows = ["t,m_alpha,m_alpha_second"] + [
        f"{t:.17g},{mv:.17g},{'' if k in (0, len(m) - 1) else format(m2[k - 1], '.17g')}"
        for k, (t, mv) in enumerate(zip(geo.times, m))
    ]
    (out / "epsilon_geodesic.csv").write_text("\n".join(rows) + "\n")
    bound = -4 * math.pi * p["alpha"] * p["tau"] * higgs.degree * p["epsilon"]
    return {"geodesic_residual": geo.residual_sup, "min_m_alpha_second": float(m2.min()),
            "convexity_bound": bound, "convex": bool(np.all(m2 >= bound - 1e-5))}


def _exp_stability(cfg, out, rng):
    div = cfg["divisor"]["parsed"]
    verdict, witness = gravity.check_polystability(div)
    vals = {"verdict": verdict, "degree": div.degree, "max_multiplicity": div.max_multiplicity}
    if witness is not None:
        vals["witness"] = repr(witness)
    return vals


def _exp_energy_report(cfg, out, rng):
    geom = _geometry(cfg)
    higgs = _higgs(cfg, geom)
    p = cfg["physics"]
    br = energy.k_alpha_reduced(geom, higgs, p["alpha"], p["tau"], geom.constant(0.0))
    vals = dict(br.report())
    vals.update({f"term_{k}": v for k, v in br.terms.items()})
    vals["entropy"] = br.entropy
    return vals


_RUNNERS = {
    "solve-vortex": _exp_solve_vortex,
    "solve-gravitating": _exp_solve_gravitating,
    "solve-twisted": _exp_solve_twisted,
    "ray-slope": _exp_ray_slope,
    "convexity-scan": _exp_convexity_scan,
    "epsilon-geodesic": _exp_epsilon_geodesic,
    "stability": _exp_stability,
    "energy-report": _exp_energy_report,
}


def _report_text(cfg, values: dict) -> str:
    head = {"version": __version__, "experiment": cfg["run"]["experiment"], "seed": cfg["run"]["seed"]}
    return energy.format_report({**head, **values}) + "\n"


def run(config_path, stdout=None, stderr=None) -> int:
    """Execute one configured experiment; returns the process exit status."""
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    try:
        cfg = load_config(Path(config_path).read_text())
    except (OSError, ConfigError, ValueError) as exc:
        print(f"error: config: {exc}", file=stderr)
        return 1
    out = Path(cfg["run"]["output"])
    if not out.is_absolute():
        out = Path(config_path).resolve().parent / out
    out.mkdir(parents=True, exist_ok=True)
    resolved = _resolved_text(cfg)
    (out / "resolved.ini").write_text(resolved + "\n")
    rng = acceptance.make_rng(cfg["run"]["seed"], 1)
    status = 0
    try:
        values = _RUNNERS[cfg["run"]["experiment"]](cfg, out, rng)
    except gravity.ContinuityStalled as exc:
        values = {"status": "stalled", "stalled_alpha": exc.alpha}
        diag = exc.diagnostics
        if diag.get("mean_f"):
            values["last_mean_f"] = diag["mean_f"][-1]
            values["last_d1_proxy"] = diag["d1_proxy"][-1]
        print(f"gravity: {exc}", file=stderr)
        status = 2
    except BradlowViolated as exc:
        print(f"error: vortex: {exc}", file=stderr)
        return 1
    except AdmissibilityError as exc:
        print(f"error: surface: AdmissibilityError: {exc}", file=stderr)
        return 1
    except (ConfigError, ValueError, RuntimeError, OverflowError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=stderr)
        return 1
    text = resolved + "\n[report]\n" + _report_text(cfg, values)
    (out / "report.txt").write_text(text)
    stdout.write(text)
    return status


def _schema_text() -> str:
    lines = ["# vortexlab configuration schema (INI: [section] then key = value)"]
    for section, keys in SCHEMA.items():
        lines.append(f"[{section}]")
        for key, (kind, default, help_) in keys.items():
            d = "required" if default is None else f"default {default}"
            lines.append(f"  {key} ({kind.__name__}, {d}): {help_}")
    return "\n".join(lines) + "\n"


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="vortexlab", description="Gravitating vortex experiments.")
    parser.add_argument("--version", action="version", version=f"vortexlab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run the experiment described by a config file")
    p_run.add_argument("config")
    p_self = sub.add_parser("selftest", help="run the fast acceptance checks")
    p_self.add_argument("--seed", type=int, default=0)
    sub.add_parser("schema", help="print the configuration schema")
    args = parser.parse_args(argv)
    if args.command == "run":
        return run(args.config)
    if args.command == "schema":
        sys.stdout.write(_schema_text())
        return 0
    lines, ok = acceptance.selftest(args.seed)
    sys.stdout.write(f"vortexlab {__version__} selftest seed = {args.seed}\n")
    sys.stdout.write("\n".join(lines) + "\n")
    sys.stdout.write(("all checks passed" if ok else "some checks FAILED") + "\n")
    return 0 if ok else 1
