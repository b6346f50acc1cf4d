"""Command-line entry point.

Settings merge as built-in defaults < ``--config`` INI file < flags. Exit
codes: 0 success, 1 numerical failure, 2 configuration error.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .adjoint import solve_adjoint
from .errors import ConfigError, SolverError
from .experiments import (
    DEFAULT_LAMBDA2,
    ExperimentSpec,
    canonical_doping,
    emit_figures,
    run_sweep,
    targets_for,
    write_csv,
)
from .fem import Mesh1D, assemble
from .objective import DesignProblem
from .optimize import OptimizerConfig, optimize
from .state import DopingProfile, solve_state
from .verify import FD_EPS, FD_INNER_TOL, gradient_check

SUBCOMMANDS = ("solve", "adjoint", "optimize", "sweep", "gradcheck")


def _positive_int(key, minimum=1):
    def conv(text):
        try:
            value = int(str(text).strip())
        except ValueError:
            raise ConfigError(f"{key}: expected an integer, got {text!r}") from None
        if value < minimum:
            raise ConfigError(f"{key}: must be >= {minimum}, got {value}")
        return value
    return conv


def _real(key, *, positive=False, nonneg=False):
    def conv(text):
        try:
            value = float(str(text).strip())
        except ValueError:
            raise ConfigError(f"{key}: expected a number, got {text!r}") from None
        if not math.isfinite(value):
            raise ConfigError(f"{key}: must be finite, got {text!r}")
        if positive and not value > 0.0:
            raise ConfigError(f"{key}: must be > 0, got {value:g}")
        if nonneg and value < 0.0:
            raise ConfigError(f"{key}: must be >= 0, got {value:g}")
        return value
    return conv


def _bool(key):
    def conv(text):
        if isinstance(text, bool):
            return text
        low = str(text).strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {text!r}")
    return conv


def _domain(text):
    parts = str(text).split(",")
    if len(parts) != 2:
        raise ConfigError(f"domain: expected 'a,b', got {text!r}")
    a, b = (_real("domain")(p) for p in parts)
    if not a < b:
        raise ConfigError(f"domain: need a < b, got {text!r}")
    return (a, b)


def _lambda_list(text):
    values = tuple(_real("lambda2_list", nonneg=True)(p) for p in str(text).split(",")
                   if p.strip())
    if not values:
        raise ConfigError("lambda2_list: empty")
    return values


def _doping(text):
    text = str(text).strip()
    kind, _, arg = text.partition(":")
    if kind == "constant":
        _real("doping")(arg)
    elif kind == "builtin":
        if arg != "canonical":
            raise ConfigError(f"doping: unknown builtin profile {arg!r}")
    elif kind == "csv":
        if not arg:
            raise ConfigError("doping: csv needs a path")
    else:
        raise ConfigError(f"doping: expected constant:<v>, builtin:canonical or "
                          f"csv:<path>, got {text!r}")
    return text


# key -> (INI section, converter, default)
PARAMETERS = {
    "nodes": ("problem", _positive_int("nodes", 3), 200),
    "domain": ("problem", _domain, (0.0, 1.0)),
    "delta": ("problem", _real("delta", positive=True), 1e-3),
    "lambda2": ("problem", _real("lambda2", nonneg=True), 0.0),
    "doping": ("problem", _doping, "builtin:canonical"),
    "freeze_totals": ("problem", _bool("freeze_totals"), False),
    "sigma": ("optimizer", _real("sigma", positive=True), 1e-4),
    "omega0": ("optimizer", _real("omega0", positive=True), 50.0),
    "gamma": ("optimizer", _real("gamma", positive=True), 1e-4),
    "tol": ("optimizer", _real("tol", positive=True), 1e-8),
    "tol_opt": ("optimizer", _real("tol_opt", positive=True), 5e-2),
    "tol_abs": ("optimizer", _real("tol_abs", positive=True), 5e-5),
    "max_iter": ("optimizer", _positive_int("max_iter"), 500),
    "literal_signs": ("optimizer", _bool("literal_signs"), False),
    "lambda2_list": ("sweep", _lambda_list, DEFAULT_LAMBDA2),
    "workers": ("sweep", _positive_int("workers"), 1),
    "seed": ("gradcheck", _positive_int("seed", 0), 0),
    "directions": ("gradcheck", _positive_int("directions"), 5),
    "eps": ("gradcheck", _real("eps", positive=True), FD_EPS),
    "out": ("output", str, "results"),
}


@dataclass
class RunConfig:
    """Merged settings for one invocation."""

    subcommand: str
    values: dict = field(default_factory=dict)
    explicit: set = field(default_factory=set)

    def __getattr__(self, name):
        try:
            return self.__dict__["values"][name]
        except KeyError:
            raise AttributeError(name) from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="FILE", help="INI file with [problem], "
                        "[optimizer], [sweep], [gradcheck] and [output] sections")
    flags = {
        "--nodes": "mesh nodes (>= 3)",
        "--domain": "interval as a,b",
        "--delta": "intrinsic density scale delta (delta^2 enters the totals)",
        "--lambda2": "squared scaled Debye length (0 selects the quasi-neutral solvers)",
        "--doping": "constant:<v>, builtin:canonical or csv:<path>",
        "--sigma": "regularization weight",
        "--omega0": "initial Armijo step",
        "--gamma": "Armijo sufficient-decrease constant",
        "--tol": "inner solver tolerance",
        "--tol-opt": "relative gradient-norm stopping tolerance",
        "--tol-abs": "absolute gradient-norm stopping tolerance",
        "--max-iter": "descent iteration cap",
        "--lambda2-list": "comma-separated strictly decreasing sweep values ending in 0",
        "--workers": "parallel sweep workers",
        "--seed": "random seed for gradcheck directions",
        "--directions": "number of gradcheck directions",
        "--eps": "finite-difference step for gradcheck",
        "--out": "output directory",
    }
    for flag, text in flags.items():
        common.add_argument(flag, default=None, help=text)
    common.add_argument("--paper-signs", "--literal-signs", dest="literal_signs",
                        action=argparse.BooleanOptionalAction, default=None,
                        help="trial step u + omega g, accepted when "
                             "J(u + omega g) < J(u) + gamma omega |g|^2")
    common.add_argument("--freeze-totals", action=argparse.BooleanOptionalAction,
                        default=None, help="keep N, P at their reference values")
    parser = argparse.ArgumentParser(
        prog="quasineutral",
        description="Doping-profile design with the nonlocal Poisson model.")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    helps = {
        "solve": "solve the state equation for the doping",
        "adjoint": "solve the state and adjoint equations",
        "optimize": "steepest-descent doping design",
        "sweep": "optimize over a list of lambda2 values and compare with lambda2 = 0",
        "gradcheck": "compare the adjoint gradient with finite differences",
    }
    for name in SUBCOMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name])
    return parser


def _read_ini(path):
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"config: cannot read {path}: {exc.strerror}") from None
    except configparser.Error as exc:
        raise ConfigError(f"config: malformed file {path}: {exc}") from None
    values = {}
    sections = {sec for sec, *_ in PARAMETERS.values()}
    for section in parser.sections():
        if section not in sections:
            raise ConfigError(f"config: unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in PARAMETERS or PARAMETERS[key][0] != section:
                raise ConfigError(f"config: unknown key {key!r} in [{section}]")
            values[key] = raw
    return values


def parse_config(argv=None) -> RunConfig:
    """Merge defaults, the optional config file and flags; validate everything."""
    ns = build_parser().parse_args(argv)
    raw = {}
    if ns.config:
        raw.update(_read_ini(ns.config))
    explicit = set()
    for key in PARAMETERS:
        value = getattr(ns, key, None)
        if value is not None:
            raw[key] = value
            explicit.add(key)
    values = {}
    for key, (_, conv, default) in PARAMETERS.items():
        values[key] = conv(raw[key]) if key in raw else default
    cfg = RunConfig(ns.subcommand, values, explicit | (set(raw) - explicit))
    _cross_check(cfg)
    return cfg


def _cross_check(cfg: RunConfig):
    if cfg.subcommand == "sweep" and "lambda2" in cfg.explicit:
        raise ConfigError("lambda2: sweep runs every value of lambda2_list; "
                          "set lambda2_list instead")
    if cfg.subcommand != "sweep" and "lambda2_list" in cfg.explicit:
        raise ConfigError(f"lambda2_list: only used by sweep, not {cfg.subcommand}")
    if not 1e-8 <= cfg.eps <= 1e-4:
        raise ConfigError(f"eps: must lie in [1e-8, 1e-4], got {cfg.eps:g}")
    if not cfg.gamma < 1.0:
        raise ConfigError(f"gamma: must be < 1, got {cfg.gamma:g}")
    if cfg.subcommand == "sweep":
        lam = cfg.lambda2_list
        if any(b >= a for a, b in zip(lam, lam[1:])):
            raise ConfigError("lambda2_list: must be strictly decreasing")
        if 0.0 not in lam:
            raise ConfigError("lambda2_list: must contain the reference value 0")


def load_doping(spec: str, x):
    """Nodal doping at ``x`` from a ``constant:``, ``builtin:`` or ``csv:`` spec."""
    kind, _, arg = spec.partition(":")
    if kind == "constant":
        return np.full(len(x), float(arg))
    if kind == "builtin":
        return canonical_doping(x)
    try:
        with open(arg, newline="", encoding="utf-8") as fh:
            rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    except OSError as exc:
        raise ConfigError(f"doping: cannot read {arg}: {exc.strerror}") from None
    pts = []
    for i, row in enumerate(rows):
        try:
            pts.append((float(row[0]), float(row[1])))
        except (ValueError, IndexError):
            if i == 0:
                continue
            raise ConfigError(f"doping: bad row {i + 1} in {arg}: {row!r}") from None
    if len(pts) < 2:
        raise ConfigError(f"doping: {arg} needs at least two (x, value) rows")
    xs, vs = np.array(pts).T
    if np.any(np.diff(xs) <= 0.0) or not np.all(np.isfinite(vs)):
        raise ConfigError(f"doping: {arg} needs strictly increasing x and finite values")
    return np.interp(x, xs, vs)


def _setup(cfg: RunConfig):
    mesh = Mesh1D(cfg.domain[0], cfg.domain[1], cfg.nodes)
    forms = assemble(mesh)
    C = load_doping(cfg.doping, forms.x)
    return mesh, forms, C, targets_for(C)


def _opt_config(cfg: RunConfig, lambda2=None) -> OptimizerConfig:
    return OptimizerConfig(
        sigma=cfg.sigma, gamma_armijo=cfg.gamma, omega0=cfg.omega0, tol_opt=cfg.tol_opt,
        tol_abs=cfg.tol_abs, tol_inner=cfg.tol, max_iter=cfg.max_iter,
        lambda2=cfg.lambda2 if lambda2 is None else lambda2,
        literal_signs=cfg.literal_signs, freeze_totals=cfg.freeze_totals,
    )


def _problem(cfg, forms, C, targets, tol=None):
    return DesignProblem(forms, C, targets, sigma=cfg.sigma, lambda2=cfg.lambda2,
                         delta2=cfg.delta ** 2, tol=cfg.tol if tol is None else tol,
                         freeze_totals=cfg.freeze_totals)


def _write_json(path, data):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".partial")
    tmp.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    tmp.replace(path)


def _cmd_solve(cfg, out):
    _, forms, C, _ = _setup(cfg)
    dp = DopingProfile.build(forms, C, cfg.delta ** 2)
    sol = solve_state(dp, cfg.lambda2, cfg.tol)
    write_csv(out / "state.csv", ("x", "C", "V", "n", "p"),
              zip(forms.x, C, sol.V, sol.n, sol.p))
    summary = {
        "lambda2": cfg.lambda2, "nodes": cfg.nodes, "alpha": sol.alpha, "beta": sol.beta,
        "gamma2": sol.gamma2, "iterations": sol.iterations, "residual": sol.residual,
        "V_max_abs": float(np.max(np.abs(sol.V))), "N": dp.N, "P": dp.P,
    }
    _write_json(out / "state.json", summary)
    print(f"state solve: lambda2={cfg.lambda2:g}, {cfg.nodes} nodes, "
          f"{sol.iterations} outer iterations")
    print(f"  max|V| = {summary['V_max_abs']:.6e}, gamma^2 = {sol.gamma2:.6e}, "
          f"residual = {sol.residual:.3e}")
    return 0


def _cmd_adjoint(cfg, out):
    _, forms, C, targets = _setup(cfg)
    dp = DopingProfile.build(forms, C, cfg.delta ** 2)
    sol = solve_state(dp, cfg.lambda2, cfg.tol)
    adj = solve_adjoint(sol, targets, cfg.tol)
    write_csv(out / "adjoint.csv", ("x", "xi"), zip(forms.x, adj.xi))
    _write_json(out / "adjoint.json", {
        "lambda2": cfg.lambda2, "xi_alpha": adj.xi_alpha, "xi_beta": adj.xi_beta,
        "iterations": adj.iterations, "residual": adj.residual,
    })
    print(f"adjoint solve: lambda2={cfg.lambda2:g}, {adj.iterations} sweeps, "
          f"residual = {adj.residual:.3e}")
    print(f"  xi_alpha = {adj.xi_alpha:.6e}, xi_beta = {adj.xi_beta:.6e}")
    return 0


def _write_trajectory(run, out):
    write_csv(out / "trajectory.csv",
              ("iteration", "J", "J1", "J2", "J3", "grad_norm", "omega", "halvings"),
              [(r.k, r.cost.total, r.cost.J1, r.cost.J2, r.cost.J3, r.grad_norm,
                r.omega, r.halvings) for r in run.iterates])


def _cmd_optimize(cfg, out):
    _, forms, C, targets = _setup(cfg)
    problem = _problem(cfg, forms, C, targets)
    try:
        run = optimize(problem, _opt_config(cfg))
    except SolverError as exc:
        if getattr(exc, "run", None) is not None:
            _write_trajectory(exc.run, out)
        raise
    _write_trajectory(run, out)
    emit_figures(run, out)
    _write_json(out / "optimize.json", {
        "lambda2": cfg.lambda2, "converged": run.converged, "stop_reason": run.stop_reason,
        "iterations": run.iterations, "J_final": run.costs[-1],
        "grad_norm_final": run.iterates[-1].grad_norm, "state_solves": run.state_solves,
    })
    print(f"optimize: lambda2={cfg.lambda2:g}, {run.iterations} iterations, "
          f"stop: {run.stop_reason}")
    print(f"  J: {run.costs[0]:.6e} -> {run.costs[-1]:.6e}; wall time "
          f"{run.wall_times['total']:.2f}s (state {run.wall_times['state']:.2f}s, "
          f"adjoint {run.wall_times['adjoint']:.2f}s)")
    return 0 if run.converged else 1


def _cmd_sweep(cfg, out):
    mesh, _, C, targets = _setup(cfg)
    spec = ExperimentSpec(mesh, C, targets.n_d, targets.p_d, cfg.lambda2_list,
                          _opt_config(cfg, 0.0), out, cfg.delta ** 2, cfg.workers)
    rows, runs = run_sweep(spec)
    emit_figures(runs, out)
    print(f"{'lambda2':>9} {'t_state[s]':>11} {'t_adj[s]':>11} {'dist_C':>11} "
          f"{'dist_V':>11} {'J_final':>12} {'iters':>5}  status")
    for r in rows:
        print(f"{r.lambda2:9.1e} {r.t_state:11.3e} {r.t_adjoint:11.3e} {r.dist_C:11.4e} "
              f"{r.dist_V:11.4e} {r.J_final:12.6e} {r.iters:5d}  {r.status}")
    return 0 if all(r.status == "ok" for r in rows) else 1


def _cmd_gradcheck(cfg, out):
    _, forms, C, targets = _setup(cfg)
    problem = _problem(cfg, forms, C, targets, tol=min(cfg.tol, FD_INNER_TOL))
    report = gradient_check(problem, directions=cfg.directions, seed=cfg.seed, eps=cfg.eps)
    _write_json(out / "gradcheck.json", {
        "lambda2": cfg.lambda2, "seed": cfg.seed, "eps": cfg.eps,
        "max_abs_err": report.max_abs_err, "max_rel_err": report.max_rel_err,
        "threshold": report.threshold, "passed": report.passed, "details": report.details,
    })
    print(f"max relative FD error: {report.max_rel_err:.3e}")
    print(report.summary())
    return 0 if report.passed else 1


COMMANDS = {
    "solve": _cmd_solve,
    "adjoint": _cmd_adjoint,
    "optimize": _cmd_optimize,
    "sweep": _cmd_sweep,
    "gradcheck": _cmd_gradcheck,
}


def run(cfg: RunConfig) -> int:
    """Execute a parsed configuration and return the exit code."""
    out = Path(cfg.out)
    try:
        return COMMANDS[cfg.subcommand](cfg, out)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except SolverError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 1


def main(argv=None) -> int:
    try:
        cfg = parse_config(argv)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else 2
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
