"""Command-line scenario runner.

Usage::

    curvlab run scenario.ini
    curvlab space gen circle n=32 [-o graph.txt]
    curvlab check be kind=s2 K=2 N=inf

Scenario files are INI documents with four sections::

    [scenario]
    experiment = diffuse        ; be-scan | diffuse | linearize | transport |
                                ; evi | contraction | cdstar | odelab
    output = out                ; directory for CSV and JSON artifacts
    seed = 0

    [space]
    kind = circle               ; path | circle | complete | erdos | s2 | file
    n = 32
    file = graph.txt            ; only for kind = file

    [entropy]
    family = regularized        ; linear | power | regularized
    N = 2
    eps = 0.01
    M = 100

    [params]
    rho0 = cosine:0.5
    t = 0.1
    steps = 64

Densities are given as ``uniform``, ``cosine:AMP[:FREQ]``,
``bump:CENTER:WIDTH[:FLOOR]``, ``point:INDEX``, ``random[:FLOOR]`` (drawn
from the scenario seed) or an explicit comma-separated list of values.
Exit status is 0 when every check passes, 1 when a check fails, 2 for
configuration errors and 3 for numerical failures.  ``CURVLAB_THREADS``
caps the number of checks evaluated concurrently.
"""

from __future__ import annotations

import argparse
import configparser
import math
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
from scipy import linalg

from . import diffusion, gamma2, linearized, odelab, transport
from .entropy import make_entropy, mccann_check
from .reports import CheckReport, _fmt, export_report
from .space import FiniteSpace, format_graph, make_space, normalize, read_graph

EXPERIMENTS = ("be-scan", "diffuse", "linearize", "transport", "evi", "contraction", "cdstar", "odelab")

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


class ConfigError(ValueError):
    """Invalid or incomplete scenario configuration."""


NUMERIC_ERRORS = (diffusion.ConvergenceError, gamma2.FinitenessError, FloatingPointError,
                  linalg.LinAlgError, RuntimeError)


# ---------------------------------------------------------------------------
# Parsing helpers


def _number(text, key: str = "value") -> float:
    try:
        return float(str(text).strip())
    except ValueError:
        raise ConfigError(f"{key}: not a number: {text!r}") from None


def _integer(text, key: str = "value") -> int:
    x = _number(text, key)
    if not float(x).is_integer():
        raise ConfigError(f"{key}: not an integer: {text!r}")
    return int(x)


def _numbers(text, key: str = "value") -> list[float]:
    return [_number(v, key) for v in str(text).replace(";", ",").split(",") if v.strip()]


def max_threads() -> int:
    raw = os.environ.get("CURVLAB_THREADS", "")
    try:
        n = int(raw)
    except ValueError:
        n = os.cpu_count() or 1
    return max(1, n)


def density(space: FiniteSpace, spec: str, rng: np.random.Generator) -> np.ndarray:
    """Density on ``space`` from a short textual description."""
    parts = [p.strip() for p in str(spec).split(":")]
    kind = parts[0].lower()
    n = space.n
    x = np.ravel(space.coords) if space.coords is not None else np.arange(n) / n
    L = space.length if space.length else 1.0
    if kind == "uniform":
        vals = np.ones(n)
    elif kind == "cosine":
        amp = _number(parts[1], "cosine amplitude") if len(parts) > 1 else 0.5
        freq = _number(parts[2], "cosine frequency") if len(parts) > 2 else 1.0
        vals = 1.0 + amp * np.cos(2 * np.pi * freq * x / L)
    elif kind == "bump":
        if len(parts) < 3:
            raise ConfigError("bump needs CENTER:WIDTH")
        c, wd = _number(parts[1], "bump center"), _number(parts[2], "bump width")
        floor = _number(parts[3], "bump floor") if len(parts) > 3 else 0.0
        z = x - c
        if space.kind == "circle":
            z = (z + L / 2) % L - L / 2
        vals = np.exp(-(z / wd) ** 2) + floor
    elif kind == "point":
        i = _integer(parts[1], "point index") if len(parts) > 1 else 0
        if not 0 <= i < n:
            raise ConfigError(f"point index {i} out of range")
        vals = np.zeros(n)
        vals[i] = 1.0
    elif kind == "random":
        floor = _number(parts[1], "random floor") if len(parts) > 1 else 0.0
        vals = rng.random(n) + floor
    else:
        vals = np.array(_numbers(spec, "density"))
        if len(vals) != n:
            raise ConfigError(f"density has {len(vals)} values, space has {n} points")
    if np.any(vals < 0) or not np.all(np.isfinite(vals)):
        raise ConfigError("densities must be finite and nonnegative")
    return normalize(space, vals)


def field(space: FiniteSpace, spec: str, rng: np.random.Generator) -> np.ndarray:
    """Signed field: ``sin[:FREQ]``, ``cos[:FREQ]``, ``random`` or explicit values."""
    parts = [p.strip() for p in str(spec).split(":")]
    kind = parts[0].lower()
    n = space.n
    x = np.ravel(space.coords) if space.coords is not None else np.arange(n) / n
    L = space.length if space.length else 1.0
    if kind in ("sin", "cos"):
        freq = _number(parts[1], "frequency") if len(parts) > 1 else 1.0
        fn = np.sin if kind == "sin" else np.cos
        return fn(2 * np.pi * freq * x / L)
    if kind == "random":
        return rng.standard_normal(n)
    vals = np.array(_numbers(spec, "field"))
    if len(vals) != n:
        raise ConfigError(f"field has {len(vals)} values, space has {n} points")
    return vals


# ---------------------------------------------------------------------------
# Scenario


class Scenario:
    """Parsed scenario configuration."""

    def __init__(self, parser: configparser.ConfigParser, base: Path):
        if not parser.has_section("scenario"):
            raise ConfigError("missing [scenario] section")
        sc = parser["scenario"]
        self.experiment = sc.get("experiment", "").strip().lower()
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment kind {self.experiment!r}; "
                              f"expected one of {', '.join(EXPERIMENTS)}")
        self.seed = _integer(sc.get("seed", "0"), "seed")
        out = Path(sc.get("output", "curvlab-out"))
        self.output = out if out.is_absolute() else base / out
        self.base = base
        self.space_cfg = dict(parser["space"]) if parser.has_section("space") else {}
        self.entropy_cfg = dict(parser["entropy"]) if parser.has_section("entropy") else {}
        self.params = dict(parser["params"]) if parser.has_section("params") else {}
        self.rng = np.random.default_rng(self.seed)

    @classmethod
    def from_file(cls, path) -> "Scenario":
        path = Path(path)
        parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
        parser.optionxform = str
        try:
            with open(path, encoding="utf-8") as fh:
                parser.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read {path}: {exc}") from None
        except configparser.Error as exc:
            raise ConfigError(f"malformed config: {exc}") from None
        return cls(parser, path.parent)

    def param(self, key, default=None, kind=float):
        if key not in self.params:
            if default is None:
                raise ConfigError(f"[params] needs {key!r}")
            return default
        raw = self.params[key]
        if kind is float:
            return _number(raw, key)
        if kind is int:
            return _integer(raw, key)
        return raw

    def space(self) -> FiniteSpace:
        cfg = dict(self.space_cfg)
        kind = cfg.pop("kind", None)
        if kind is None:
            raise ConfigError("[space] needs 'kind'")
        try:
            if kind == "file":
                p = Path(cfg.get("file", ""))
                return read_graph(p if p.is_absolute() else self.base / p)
            numeric = {k: _number(v, k) for k, v in cfg.items()}
            return make_space(kind, **numeric)
        except ConfigError:
            raise
        except (ValueError, OSError) as exc:
            raise ConfigError(f"[space]: {exc}") from None

    def entropy(self):
        cfg = dict(self.entropy_cfg)
        family = cfg.pop("family", "linear")
        try:
            return make_entropy(family, **{k: _number(v, k) for k, v in cfg.items()})
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"[entropy]: {exc}") from None


# ---------------------------------------------------------------------------
# Experiments.  Each returns (reports, {filename: text}).


def _info_report(name: str, value: float, **details) -> CheckReport:
    return CheckReport(name, True, float(value), details=details)


def _map_checks(fns):
    with ThreadPoolExecutor(max_workers=max_threads()) as pool:
        return list(pool.map(lambda fn: fn(), fns))


def exp_be_scan(sc: Scenario):
    space = sc.space()
    N = sc.param("N", math.inf)
    K_opt = gamma2.optimal_curvature(space, N)
    reports = [_info_report("optimal_curvature", K_opt, N=N)]
    if "K" in sc.params:
        Ks = _numbers(sc.params["K"], "K")
        reports += _map_checks([lambda K=K: gamma2.be_check(space, K, N) for K in Ks])
    if "dimension_K" in sc.params:
        K = sc.param("dimension_K")
        reports.append(_info_report("optimal_dimension", gamma2.optimal_dimension(space, K), K=K))
    return reports, {}


def exp_diffuse(sc: Scenario):
    space, model = sc.space(), sc.entropy()
    rho0 = density(space, sc.param("rho0", "uniform", str), sc.rng)
    traj = diffusion.evolve(space, model, rho0, sc.param("t"), sc.param("steps", 64, int))
    masses = traj.masses()
    drift = float(np.abs(masses - masses[0]).max())
    mass_rep = CheckReport("mass_conservation", drift <= 1e-10 * max(1.0, abs(masses[0])), -drift,
                           residuals=list(masses - masses[0]))
    dissip = diffusion.entropy_dissipation_report(traj, lambda r: r * r, lambda r: 2 * r)
    return [mass_rep, dissip], {"trajectory.csv": traj.to_csv()}


def exp_linearize(sc: Scenario):
    space, model = sc.space(), sc.entropy()
    rho0 = density(space, sc.param("rho0", "uniform", str), sc.rng)
    w0 = field(space, sc.param("w0", "sin", str), sc.rng)
    phi_T = field(space, sc.param("phiT", "cos", str), sc.rng)
    rule = sc.param("rule", "average", str)
    traj = diffusion.evolve(space, model, rho0, sc.param("t"), sc.param("steps", 64, int))
    fwd = linearized.forward_linearized_solve(traj, w0, rule)
    bwd = linearized.backward_solve(traj, phi_T, rule=rule)
    rep = linearized.pairing_check(fwd, bwd)
    files = {"trajectory.csv": traj.to_csv(), "forward.csv": fwd.to_csv(), "backward.csv": bwd.to_csv()}
    return [rep], files


def exp_transport(sc: Scenario):
    space = sc.space()
    rho0 = density(space, sc.param("rho0", "uniform", str), sc.rng)
    rho1 = density(space, sc.param("rho1", "uniform", str), sc.rng)
    w2, coupling = transport.w2_distance(space, rho0, rho1)
    tol = 1e-9 * max(1.0, coupling.cost)
    rep = CheckReport("w2_distance", bool(abs(coupling.dual_gap) <= tol and coupling.slackness <= tol),
                      w2, details={"cost": coupling.cost, "dual_gap": coupling.dual_gap,
                                   "slackness": coupling.slackness})
    files = {}
    if space.kind in ("path", "circle"):
        curve = transport.geodesic_1d(space, rho0, rho1, sc.param("J", 16, int))
        files["geodesic.csv"] = curve.to_csv()
    return [rep], files


def exp_evi(sc: Scenario):
    space, model = sc.space(), sc.entropy()
    rho0 = density(space, sc.param("rho0", "uniform", str), sc.rng)
    nu = density(space, sc.param("nu", sc.params.get("rho0", "uniform"), str), sc.rng)
    rep = transport.evi_check(space, model, rho0, nu, sc.param("K", 0.0), sc.param("T"),
                              sc.param("steps", 16, int), tol=_opt(sc, "tol"),
                              J=sc.param("J", 16, int))
    return [rep], {}


def _opt(sc: Scenario, key):
    return _number(sc.params[key], key) if key in sc.params else None


def exp_contraction(sc: Scenario):
    space, model = sc.space(), sc.entropy()
    rho0 = density(space, sc.param("rho0", "uniform", str), sc.rng)
    rho1 = density(space, sc.param("rho1", "uniform", str), sc.rng)
    rep = transport.contraction_check(space, model, rho0, rho1, sc.param("K", 0.0), sc.param("T"),
                                      sc.param("steps", 16, int), tol=_opt(sc, "tol"))
    return [rep], {}


def exp_cdstar(sc: Scenario):
    space = sc.space()
    rho0 = density(space, sc.param("rho0", "uniform", str), sc.rng)
    rho1 = density(space, sc.param("rho1", "uniform", str), sc.rng)
    curve = transport.geodesic_1d(space, rho0, rho1, sc.param("J", 16, int))
    rep = transport.cdstar_convexity_check(curve, sc.param("K", 0.0), sc.param("N", math.inf),
                                           tol=_opt(sc, "tol"))
    return [rep], {"geodesic.csv": curve.to_csv()}


def exp_odelab(sc: Scenario):
    name = sc.param("system", "linear", str)
    d = sc.param("dim", 2, int)
    if name in ("linear", "quadratic-potential"):
        raw = sc.params.get("A")
        A = np.array(_numbers(raw, "A")).reshape(d, d) if raw else -np.eye(d) if name == "linear" else np.eye(d)
        system = odelab.make_system(name, A=A)
    elif name == "ou":
        system = odelab.make_system(name, dim=d, theta=sc.param("theta", 1.0),
                                    diffusion=sc.param("diffusion", 1.0))
    elif name == "nonlinear-mobility":
        system = odelab.make_system(name, c=sc.param("c", 1.0))
    else:
        raise ConfigError(f"unknown flow system {name!r}")
    d = system.dim
    x0 = np.array(_numbers(sc.param("x0", ",".join(["1"] * d), str), "x0"))
    x1 = np.array(_numbers(sc.param("x1", ",".join(["0"] * d), str), "x1"))
    if len(x0) != d or len(x1) != d:
        raise ConfigError(f"x0 and x1 need {d} components")
    T, n = sc.param("T", 1.0), sc.param("steps", 100, int)
    samples = [(sc.rng.standard_normal(d), sc.rng.standard_normal(d)) for _ in range(sc.param("samples", 32, int))]
    traj = odelab.integrate_system(system, x0, sc.rng.standard_normal(d), sc.rng.standard_normal(d), T, n)
    dev = odelab.pairing_deviation(traj)
    reports = [
        CheckReport("ode_pairing", dev <= 1e-10 * max(1.0, abs(traj.pairings()[0])), -dev),
        odelab.hamiltonian_monotonicity_check(system, samples),
        odelab.cost_contraction_check(system, x0, x1, T, n),
    ]
    if system.potential_mode:
        reports.append(odelab.convexity_contraction_check(system, x0, x1, T, n))
    return reports, {}


RUNNERS = {
    "be-scan": exp_be_scan, "diffuse": exp_diffuse, "linearize": exp_linearize,
    "transport": exp_transport, "evi": exp_evi, "contraction": exp_contraction,
    "cdstar": exp_cdstar, "odelab": exp_odelab,
}


# ---------------------------------------------------------------------------
# Output


def write_atomic(path: Path, text: str) -> None:
    """Write UTF-8 text to ``path`` through a temporary file and a rename."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def verdict_line(rep: CheckReport) -> str:
    return f"{rep.name}: {rep.verdict} margin={_fmt(rep.margin)}"


def run_scenario(config, out=None, err=None) -> int:
    """Run a scenario file; returns the exit status."""
    out = out or sys.stdout
    err = err or sys.stderr
    try:
        sc = Scenario.from_file(config)
        reports, files = RUNNERS[sc.experiment](sc)
    except ConfigError as exc:
        print(f"config error: {exc}", file=err)
        return EXIT_CONFIG
    except NUMERIC_ERRORS as exc:
        print(f"numerical failure: {exc}", file=err)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"config error: {exc}", file=err)
        return EXIT_CONFIG
    for name in sorted(files):
        write_atomic(sc.output / name, files[name])
    write_atomic(sc.output / "reports.json", export_report(reports) + "\n")
    for rep in reports:
        print(verdict_line(rep), file=out)
    return EXIT_OK if all(r.holds for r in reports) else EXIT_CHECK


def _kv(pairs) -> dict:
    out = {}
    for p in pairs:
        if "=" not in p:
            raise ConfigError(f"expected key=value, got {p!r}")
        k, v = p.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def cmd_space_gen(args, out=None) -> int:
    out = out or sys.stdout
    params = {k: _number(v, k) for k, v in _kv(args.params).items()}
    try:
        space = make_space(args.kind, **params)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    text = format_graph(space)
    if args.output:
        write_atomic(Path(args.output), text)
    else:
        out.write(text)
    return EXIT_OK


def cmd_check(args, out=None) -> int:
    out = out or sys.stdout
    params = _kv(args.params)
    kind = args.kind
    if kind == "be":
        space_kw = {k: _number(v, k) for k, v in params.items() if k not in ("K", "N", "space")}
        space = make_space(params.get("space", "s2"), **space_kw)
        rep = gamma2.be_check(space, _number(params.get("K", "0"), "K"), _number(params.get("N", "inf"), "N"))
    elif kind == "mccann":
        fam = params.pop("family", "power")
        N = _number(params.pop("test_N", params.get("N", "inf")), "test_N")
        model = make_entropy(fam, **{k: _number(v, k) for k, v in params.items()})
        rep = mccann_check(model, N, np.linspace(0.01, 10.0, 1000))
    elif kind == "hamiltonian":
        name = params.pop("system", "nonlinear-mobility")
        system = odelab.make_system(name)
        rng = np.random.default_rng(_integer(params.get("seed", "0"), "seed"))
        d = system.dim
        rep = odelab.hamiltonian_monotonicity_check(
            system, [(rng.standard_normal(d), rng.standard_normal(d)) for _ in range(64)])
    else:
        raise ConfigError(f"unknown check kind {kind!r}; expected be, mccann or hamiltonian")
    print(verdict_line(rep), file=out)
    if args.json:
        write_atomic(Path(args.json), export_report([rep]) + "\n")
    return EXIT_OK if rep.holds else EXIT_CHECK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="curvlab", description="Curvature-dimension laboratory on finite spaces.")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a scenario file")
    r.add_argument("config")
    s = sub.add_parser("space", help="space utilities")
    ssub = s.add_subparsers(dest="space_command", required=True)
    g = ssub.add_parser("gen", help="generate a space in graph text format")
    g.add_argument("kind")
    g.add_argument("params", nargs="*", help="key=value pairs")
    g.add_argument("-o", "--output")
    c = sub.add_parser("check", help="run a single check")
    c.add_argument("kind", help="be | mccann | hamiltonian")
    c.add_argument("params", nargs="*", help="key=value pairs")
    c.add_argument("--json", help="write the report to this file")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        if args.command == "run":
            return run_scenario(args.config)
        if args.command == "space":
            return cmd_space_gen(args)
        return cmd_check(args)
    except (ConfigError, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NUMERIC_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
